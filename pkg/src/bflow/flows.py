"""Flows of vector fields, evolution of time-dependent fields and their inverse.

``model=None`` integrates in free Euclidean space with no domain check; with
a model, trajectories must stay in its chart domain, boundary-tangent fields
have boundary nodes projected back after each accepted step, and fields on
half-space patches must vanish near the artificial faces.
"""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from bflow.diffeo import DiffeoPath, DiscreteDiffeomorphism
from bflow.errors import FieldSupportError, PreconditionError
from bflow.fields import ScalarField, VectorField
from bflow.geometry import HalfSpacePatch, ManifoldModel
from bflow.integrate import DEFAULT_SETTINGS, FlowSettings, integrate
from bflow.interp import Grid, spline_coefficients, GridSpline

PATH_SAMPLES = 33
FACE_WIDTH = 0.1


class TimeDependentVectorField:
    """``X(t, p)``; ``fn`` takes a scalar time and a point batch ``(N, d)``."""

    def __init__(self, fn: Callable, dim: int, tangent=False, support=None, name="Xt"):
        self.fn = fn
        self.dim = dim
        self.tangent = tangent
        self.support = support
        self.name = name

    def __call__(self, t, points):
        p = np.asarray(points, dtype=float)
        single = p.ndim == 1
        out = np.asarray(self.fn(float(t), np.atleast_2d(p)), dtype=float).reshape(-1, self.dim)
        return out[0] if single else out

    def at(self, t: float) -> VectorField:
        return VectorField(lambda p: self.fn(float(t), p), self.dim, self.tangent, self.support, f"{self.name}({t})")

    @classmethod
    def stationary(cls, x: VectorField) -> "TimeDependentVectorField":
        return cls(lambda t, p: x.fn(p), x.dim, x.tangent, x.support, x.name)

    @classmethod
    def from_samples(cls, times, grid: Grid, values, tangent=False, support=None, name="Xt"):
        """Cubic in time, tensor cubic spline in space; ``values`` is ``(K,) + grid.shape + (d,)``."""
        values = np.asarray(values, dtype=float)
        coefs = np.stack([spline_coefficients(v, grid.axes) for v in values])
        in_time = CubicSpline(np.asarray(times, dtype=float), coefs, axis=0)
        dim = values.shape[-1]

        def fn(t, p):
            spl = GridSpline(grid, values[0], coef=np.ascontiguousarray(in_time(t)))
            return spl.at_points(p)

        return cls(fn, dim, tangent, support, name)


def _check_faces(model, fields_at: Sequence[VectorField]):
    if not isinstance(model, HalfSpacePatch):
        return
    n = model.dim
    k = 9
    ax = [np.linspace(-1, 1, k)] * (n - 1) + [np.linspace(0, 1, k)]
    pts = np.stack([g.ravel() for g in np.meshgrid(*ax, indexing="ij")], axis=-1)
    # fill the face band densely
    rng = np.random.default_rng(12345)
    extra = rng.uniform([-1] * (n - 1) + [0], [1] * n, size=(400, n))
    pts = np.concatenate([pts, extra])
    pts = pts[model.near_artificial_faces(pts, FACE_WIDTH)]
    for x in fields_at:
        worst = float(np.max(np.abs(x(pts)))) if len(pts) else 0.0
        if worst > 1e-12:
            raise FieldSupportError(
                f"field {x.name} does not vanish within {FACE_WIDTH} of the artificial faces (|X| = {worst:.3e})"
            )


def _machinery(model: Optional[ManifoldModel], tangent: bool, start):
    """Projection and domain predicates for a batch of start points."""
    if model is None:
        return None, None
    inside = lambda y: model.in_chart(y, tol=1e-9)  # noqa: E731
    mask = model.on_boundary(start) if tangent and model.has_boundary else None
    if mask is None or not mask.any():
        return None, inside

    def project(y):
        out = y.copy()
        out[mask] = model.project_to_boundary(y[mask])
        return out, mask

    return project, inside


def flow_points(
    x: VectorField,
    t,
    points,
    settings: FlowSettings = DEFAULT_SETTINGS,
    model: Optional[ManifoldModel] = None,
) -> np.ndarray:
    """``e^{t X}`` applied to a batch; ``t`` may be a scalar or one time per point."""
    p = np.array(np.atleast_2d(np.asarray(points, dtype=float)))
    t = np.broadcast_to(np.asarray(t, dtype=float), (len(p),))
    if model is not None:
        _check_faces(model, [x])
    active = t != 0
    if x.support is not None:
        active &= np.asarray(x.support(p), bool)
    if not active.any():
        return p
    start = p[active]
    tt = t[active][:, None]
    project, inside = _machinery(model, x.tangent, start)
    if np.all(tt == tt[0]):
        y, _ = integrate(lambda s, y: x.fn(y), start, 0.0, float(tt[0, 0]), settings, project, inside)
    else:
        # rescale time so every trajectory runs over [0, 1]
        scaled = FlowSettings(settings.abs_tol, settings.rel_tol, settings.max_step / max(1.0, np.abs(tt).max()))
        y, _ = integrate(lambda s, y: tt * x.fn(y), start, 0.0, 1.0, scaled, project, inside)
    p[active] = y
    return p


def flow(x: VectorField, t: float, p, settings: FlowSettings = DEFAULT_SETTINGS, model=None) -> np.ndarray:
    """``e^{t X}(p)`` for a single point."""
    p = np.asarray(p, dtype=float).reshape(-1)
    return flow_points(x, t, p[None, :], settings, model)[0]


def flow_map(
    x: VectorField,
    t: float,
    settings: FlowSettings = DEFAULT_SETTINGS,
    model: Optional[ManifoldModel] = None,
    grid: Optional[Grid] = None,
) -> DiscreteDiffeomorphism:
    grid = grid or model.default_grid()
    nodes = grid.nodes.reshape(-1, grid.dim)
    vals = flow_points(x, t, nodes, settings, model)
    return DiscreteDiffeomorphism(grid, vals.reshape(grid.shape + (grid.dim,)), model, boundary_preserving=x.tangent)


def evolve(
    xt: TimeDependentVectorField,
    settings: FlowSettings = DEFAULT_SETTINGS,
    model: Optional[ManifoldModel] = None,
    grid: Optional[Grid] = None,
    n_samples: int = PATH_SAMPLES,
) -> DiffeoPath:
    """Solve ``gamma' = X(t, gamma)`` from the identity; returns the path sampled at uniform times."""
    grid = grid or model.default_grid()
    times = np.linspace(0.0, 1.0, n_samples)
    if model is not None:
        _check_faces(model, [xt.at(t) for t in times[::8]])
    nodes = grid.nodes.reshape(-1, grid.dim)
    active = np.ones(len(nodes), bool) if xt.support is None else np.asarray(xt.support(nodes), bool)
    y = nodes[active].copy()
    project, inside = _machinery(model, xt.tangent, y)
    shape = grid.shape + (grid.dim,)
    maps = [DiscreteDiffeomorphism(grid, nodes.reshape(shape), model, boundary_preserving=xt.tangent)]
    h = None
    for t0, t1 in zip(times[:-1], times[1:]):
        if len(y):
            y, h = integrate(xt.fn, y, t0, t1, settings, project, inside, h)
        vals = nodes.copy()
        vals[active] = y
        maps.append(DiscreteDiffeomorphism(grid, vals.reshape(shape), model, boundary_preserving=xt.tangent))
    return DiffeoPath(times, maps)


def right_log_derivative(c: DiffeoPath, k: int) -> VectorField:
    """``delta^r(c)`` at sample index ``k``: ``(d/dt c)(t_k) o c(t_k)^{-1}``, as a sampled field."""
    ck = c[k]
    velocity = c.time_derivative(k)
    pre = ck.invert().values.reshape(-1, c.grid.dim)
    vel_spline = GridSpline(c.grid, velocity)
    out = vel_spline.at_points(pre).reshape(velocity.shape)
    return VectorField.from_samples(c.grid, out, tangent=ck.boundary_preserving, name=f"delta_r[{k}]")


def right_log_derivative_field(c: DiffeoPath) -> TimeDependentVectorField:
    """All samples of ``delta^r(c)`` bundled into a time-dependent field."""
    vals = []
    for k in range(len(c)):
        ck = c[k]
        pre = ck.invert().values.reshape(-1, c.grid.dim)
        velocity = c.time_derivative(k)
        vals.append(GridSpline(c.grid, velocity).at_points(pre).reshape(velocity.shape))
    return TimeDependentVectorField.from_samples(c.times, c.grid, np.stack(vals), tangent=c[0].boundary_preserving)


def _path_at_node_times(c: DiffeoPath, tau: np.ndarray) -> np.ndarray:
    """Evaluate ``c(tau_i)(x_i)`` at every grid node ``x_i`` with its own time ``tau_i``."""
    vals = c.values.reshape(len(c), -1, c.grid.dim)
    spl = CubicSpline(c.times, vals, axis=0)
    k = np.clip(np.searchsorted(c.times, tau, side="right") - 1, 0, len(c.times) - 2)
    dt = tau - c.times[k]
    nodes = np.arange(vals.shape[1])
    coef = spl.c[:, k, nodes, :]  # (4, N, d)
    return ((coef[0] * dt[:, None] + coef[1]) * dt[:, None] + coef[2]) * dt[:, None] + coef[3]


def split_by_partition(
    c: DiffeoPath,
    partition: Sequence[ScalarField],
    cover: Sequence[Callable],
    near_identity: float = 0.2,
) -> list:
    """Factor ``c(1)`` as ``phi_l o ... o phi_1`` with ``phi_j`` supported in ``cover[j]``.

    ``psi_j(x) = c(lambda_1(x) + ... + lambda_j(x))(x)``, ``phi_1 = psi_1`` and
    ``phi_{j+1} = psi_{j+1} o psi_j^{-1}``. ``cover[j]`` is a point predicate.
    """
    if len(partition) != len(cover) or not partition:
        raise ValueError("need one cover set per partition function")
    grid = c.grid
    nodes = grid.nodes.reshape(-1, grid.dim)
    lam = np.stack([np.asarray(f(nodes), dtype=float) for f in partition])
    if np.max(np.abs(lam.sum(axis=0) - 1.0)) > 1e-10:
        raise PreconditionError("partition functions do not sum to one")
    if np.min(lam) < -1e-12:
        raise PreconditionError("partition functions must be nonnegative")
    for j, u in enumerate(cover):
        outside = ~np.asarray(u(nodes), bool)
        if np.any(np.abs(lam[j][outside]) > 1e-12):
            raise PreconditionError(f"partition function {j} is not supported in its cover set")
    if c.sup_distance_from_identity() > near_identity:
        raise PreconditionError("path leaves the near-identity regime")
    model = c[0].model
    bp = c.end.boundary_preserving
    shape = grid.shape + (grid.dim,)
    partial = np.clip(np.cumsum(lam, axis=0), 0.0, 1.0)
    psis = []
    for j in range(len(partition)):
        vals = nodes if np.all(partial[j] == 0) else _path_at_node_times(c, partial[j])
        if np.all(partial[j] == 1.0):
            vals = c.end.values.reshape(-1, grid.dim)
        psis.append(DiscreteDiffeomorphism(grid, np.asarray(vals).reshape(shape), model, boundary_preserving=bp))
    factors = [psis[0]]
    for j in range(1, len(psis)):
        factors.append(psis[j].compose(psis[j - 1].invert()))
    return factors


def flow_jacobian(
    x: VectorField,
    t: float,
    points,
    settings: FlowSettings = DEFAULT_SETTINGS,
    model: Optional[ManifoldModel] = None,
    h: float = 1e-5,
) -> np.ndarray:
    """Jacobians of ``e^{tX}`` at a batch of points by central differences of the flow itself.

    Points closer than ``h`` to the boundary use a second-order one-sided stencil.
    """
    p = np.atleast_2d(np.asarray(points, dtype=float))
    n, d = p.shape
    jac = np.empty((n, d, d))
    base = None
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        ok_p = np.ones(n, bool) if model is None else model.in_chart(p + e, tol=0.0)
        ok_m = np.ones(n, bool) if model is None else model.in_chart(p - e, tol=0.0)
        central = ok_p & ok_m
        col = np.empty((n, d))
        if central.any():
            col[central] = (
                flow_points(x, t, p[central] + e, settings, model) - flow_points(x, t, p[central] - e, settings, model)
            ) / (2 * h)
        for mask, sgn in ((~central & ok_p, 1.0), (~central & ~ok_p, -1.0)):
            if mask.any():
                if base is None:
                    base = flow_points(x, t, p, settings, model)
                f1 = flow_points(x, t, p[mask] + sgn * e, settings, model)
                f2 = flow_points(x, t, p[mask] + 2 * sgn * e, settings, model)
                col[mask] = sgn * (-3 * base[mask] + 4 * f1 - f2) / (2 * h)
        jac[:, :, j] = col
    return jac
