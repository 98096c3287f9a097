"""Normal-derivative nondegeneracy of fields vanishing on the boundary.

For ``Z`` vanishing on the boundary near ``x`` the quantity
``<nabla_nu Z, nu>(x)`` is evaluated for several metrics and connections.
Its vanishing, and the direction of ``nabla_nu Z``, must not depend on
those choices; the report records whether that holds.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from bflow.errors import PreconditionError
from bflow.fields import VectorField
from bflow.geometry import (
    Connection,
    ManifoldModel,
    MetricSpec,
    PointClass,
    classify_point,
    covariant_derivative,
    outward_normal,
    random_connection,
    random_metric,
)

SATISFIED_TOL = 1e-6
PARALLEL_TOL = 1e-6
VANISH_TOL = 1e-10


def vector_angle(a, b) -> float:
    """Angle between two vectors, stable for nearly parallel inputs."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ua = a / np.linalg.norm(a)
    ub = b / np.linalg.norm(b)
    return float(2.0 * np.arctan2(np.linalg.norm(ua - ub), np.linalg.norm(ua + ub)))


@dataclass
class ConditionIIReport:
    point: list
    field: str
    entries: list = field(default_factory=list)
    satisfied: bool = False
    consistent: bool = True
    max_angle: float = 0.0
    parallel: bool = True

    def to_json(self) -> dict:
        return {
            "point": self.point,
            "field": self.field,
            "entries": self.entries,
            "satisfied": self.satisfied,
            "consistent": self.consistent,
            "max_angle": self.max_angle,
            "parallel": self.parallel,
            "satisfied_tol": SATISFIED_TOL,
            "parallel_tol": PARALLEL_TOL,
        }


def _boundary_patch(model: ManifoldModel, x, radius=0.1, k=21):
    """Boundary sample points within ``radius`` of ``x``."""
    samples = model.boundary_samples(2000, np.random.default_rng(0))
    near = samples[np.linalg.norm(samples - x, axis=-1) <= radius]
    if model.dim == 2 and model.kind == "halfspace":
        line = np.linspace(x[0] - radius, x[0] + radius, k)
        near = np.concatenate([near, np.stack([line, np.zeros(k)], axis=-1)])
    return np.concatenate([near, x[None, :]])


def check_condition_II(
    model: ManifoldModel,
    metric: MetricSpec,
    z: VectorField,
    x,
    extra_metrics=(),
    extra_connections=(),
    n_random_metrics: int = 0,
    n_random_connections: int = 0,
    rng=None,
) -> ConditionIIReport:
    """Evaluate ``<nabla_nu Z, nu>(x)`` across (metric, connection) pairs."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if classify_point(model, x) is not PointClass.BOUNDARY:
        raise PreconditionError(f"{x} is not a boundary point")
    patch = _boundary_patch(model, x)
    worst = float(np.max(np.abs(z(patch))))
    if worst > VANISH_TOL:
        raise PreconditionError(f"field does not vanish on the boundary near {x.tolist()} (|Z| = {worst:.3e})")
    rng = np.random.default_rng(0) if rng is None else rng
    metrics = [metric, *extra_metrics] + [random_metric(model.dim, rng) for _ in range(n_random_metrics)]
    pairs = [(g, Connection(g)) for g in metrics]
    pairs += [(c.metric, c) for c in extra_connections]
    pairs += [(metric, random_connection(metric, rng)) for _ in range(n_random_connections)]
    entries = []
    vectors = []
    for g, conn in pairs:
        nu = outward_normal(model, g, x)
        dz = covariant_derivative(g, nu, z, x, model=model, connection=conn)
        value = float(dz @ g(x) @ nu)
        vectors.append(dz)
        entries.append(
            {
                "metric": g.tag,
                "connection": conn.tag,
                "value": value,
                "nabla_nu_Z": dz.tolist(),
                "satisfied": abs(value) > SATISFIED_TOL,
            }
        )
    flags = {e["satisfied"] for e in entries}
    nonzero = [v for v in vectors if np.linalg.norm(v) > 1e-12]
    max_angle = 0.0
    for i in range(len(nonzero)):
        for j in range(i + 1, len(nonzero)):
            max_angle = max(max_angle, vector_angle(nonzero[i], nonzero[j]))
    zero_mixed = 0 < len(nonzero) < len(vectors)
    return ConditionIIReport(
        point=x.tolist(),
        field=z.name,
        entries=entries,
        satisfied=entries[0]["satisfied"],
        consistent=len(flags) == 1,
        max_angle=max_angle,
        parallel=max_angle <= PARALLEL_TOL and not zero_mixed,
    )
