"""Named vector fields on the model manifolds, with closed-form flows where known."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import expm

from bflow.errors import ConfigError
from bflow.expr import Expr, coordinate_names
from bflow.fields import VectorField, plateau_bump
from bflow.geometry import DiskD2, EuclideanBall, HalfSpacePatch, Interval01, ManifoldModel


@dataclass(frozen=True)
class FieldPreset:
    name: str
    model: Callable[[], ManifoldModel]
    build: Callable[[], VectorField]
    tangent: bool = True
    exact_flow: Optional[Callable] = None  # (t, points) -> points
    exact_derivative: Optional[Callable] = None  # (t, points) -> d/dx of the flow, 1D only


def sin_pi_flow(t, points):
    """Closed form ``(2/pi) atan(e^{pi t} tan(pi x / 2))``, written with atan2 so ``x = 1`` is exact."""
    x = np.asarray(points, dtype=float)
    return (2 / np.pi) * np.arctan2(np.exp(np.pi * t) * np.sin(np.pi * x / 2), np.cos(np.pi * x / 2))


def sin_pi_derivative(t, points):
    x = np.asarray(points, dtype=float)
    e = np.exp(np.pi * t)
    return e / (1.0 + (e * e - 1.0) * np.sin(np.pi * x / 2) ** 2)


def logistic_flow(t, points):
    x = np.asarray(points, dtype=float)
    e = np.exp(t)
    return x * e / (1.0 - x + x * e)


def logistic_derivative(t, points):
    x = np.asarray(points, dtype=float)
    e = np.exp(t)
    return e / (1.0 - x + x * e) ** 2


def _linear(matrix):
    a = np.asarray(matrix, dtype=float)

    def field(p):
        return p @ a.T

    def exact(t, points):
        return np.asarray(points, dtype=float) @ expm(t * a).T

    return field, exact


_ROT2 = _linear([[0.0, -1.0], [1.0, 0.0]])
_ROT3 = _linear([[0.0, -1.0, -0.5], [1.0, 0.0, 0.0], [0.5, 0.0, 0.0]])


def _disk_swirl(p):
    x, y = p[:, 0], p[:, 1]
    damp = 1.0 - x * x - y * y
    return np.stack([-y * (1 + 0.5 * x) + 0.4 * damp, x * (1 + 0.5 * x) - 0.2 * damp], axis=-1)


def _halfspace_window(p):
    # vanishes within 0.15 of the artificial faces of [-1, 1] x [0, 1]
    w = plateau_bump(p[:, 0] / 0.85) * plateau_bump(p[:, 1] / 0.85)
    return np.stack([w * (0.5 + 0.3 * p[:, 1]), w * 0.4 * p[:, 1] * np.cos(p[:, 0])], axis=-1)


PRESETS = {
    p.name: p
    for p in [
        FieldPreset(
            "sin_pi",
            Interval01,
            lambda: VectorField(lambda q: np.sin(np.pi * q), 1, tangent=True, name="sin(pi x) d/dx"),
            exact_flow=sin_pi_flow,
            exact_derivative=sin_pi_derivative,
        ),
        FieldPreset(
            "logistic",
            Interval01,
            lambda: VectorField(lambda q: q * (1 - q), 1, tangent=True, name="x(1-x) d/dx"),
            exact_flow=logistic_flow,
            exact_derivative=logistic_derivative,
        ),
        FieldPreset(
            "rotation",
            DiskD2,
            lambda: VectorField(_ROT2[0], 2, tangent=True, name="d/dtheta"),
            exact_flow=_ROT2[1],
        ),
        FieldPreset("disk_swirl", DiskD2, lambda: VectorField(_disk_swirl, 2, tangent=True, name="disk swirl")),
        FieldPreset(
            "disk_radial",
            DiskD2,
            lambda: VectorField(lambda q: q.copy(), 2, tangent=False, name="radial"),
            tangent=False,
            exact_flow=lambda t, q: np.asarray(q, dtype=float) * np.exp(t),
        ),
        FieldPreset(
            "halfspace_window",
            lambda: HalfSpacePatch(2),
            lambda: VectorField(_halfspace_window, 2, tangent=True, name="windowed half-space field"),
        ),
        FieldPreset(
            "ball_rotation",
            lambda: EuclideanBall(1),
            lambda: VectorField(_ROT3[0], 3, tangent=True, name="skew-linear field on the ball"),
            exact_flow=_ROT3[1],
        ),
    ]
}

BOUNDARY_TANGENT = ("sin_pi", "logistic", "disk_swirl", "halfspace_window", "ball_rotation")


def preset(name: str) -> FieldPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown field preset {name!r}; known: {sorted(PRESETS)}") from None


def field_from_components(components, tangent: bool) -> VectorField:
    """Vector field from one expression per chart coordinate (``x`` in 1D, else ``x1 .. xn``)."""
    dim = len(components)
    if dim == 0:
        raise ConfigError("a field needs at least one component")
    exprs = [Expr(c, coordinate_names(dim)) for c in components]

    def fn(p):
        return np.stack([e.on_points(p) for e in exprs], axis=-1)

    return VectorField(fn, dim, tangent=tangent, name=" , ".join(components))
