"""Factor near-identity maps into time-one flows of coordinate-aligned fields.

A target ``Phi`` on a box grid is written as ``E_1 o ... o E_n`` where
``E_k`` is the time-one flow of ``f_k c_k e_k``: it moves only coordinate
``k``, and ``c_k`` is a fixed frame coefficient (``1`` for ``d/dx_k``,
``x_n`` for ``x_n d/dx_n``, or the coefficient of a transversal field).
Factors are solved right to left: ``E_n`` must reproduce the last
coordinate of ``Phi``; ``E_k`` must reproduce ``m_k = Phi_k o G_k^{-1}`` with
``G_k = E_{k+1} o ... o E_n`` already known. Each one-coordinate problem is
a damped fixed-point iteration ``f <- f + beta J^{-1} (m - flow(f))`` where
``J`` is the Jacobian of the node images with respect to the node values
of ``f``. The iteration keeps its best iterate and stops after ``patience``
steps without improvement.

Flows here run in free Euclidean space: the fields are cut to the patch by
construction of the problem, not by the artificial faces of a chart.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from bflow.diffeo import DiscreteDiffeomorphism
from bflow.errors import ConvergenceError, PreconditionError
from bflow.fields import VectorField, build_varphi
from bflow.flows import flow_points
from bflow.geometry import HalfSpacePatch
from bflow.integrate import FlowSettings, integrate
from bflow.interp import Grid, GridSpline

EXTRAPOLATION = 0.25
# the Jacobian only steers the correction, so it tolerates a looser integration
JACOBIAN_FLOW = FlowSettings(abs_tol=1e-8, rel_tol=1e-8)


@dataclass(frozen=True)
class SolverSettings:
    tol: float = 1e-10
    max_iter: int = 200
    beta: float = 0.8
    near_identity: float = 0.1
    patience: int = 8
    accept: float = 1e-6  # best residual a stalled iteration may still return
    flow: FlowSettings = field(default_factory=FlowSettings)

    def __post_init__(self):
        if self.tol <= 0 or not 0 < self.beta <= 1 or self.max_iter < 1 or self.patience < 1:
            raise ValueError("invalid solver settings")


@dataclass
class Factor:
    axis: int
    generator: str
    coefficient: Callable  # frame coefficient c_k on point batches
    values: np.ndarray  # f_k at the grid nodes
    iterations: int = 0
    residual: float = 0.0  # sup error of this factor's own coordinate problem


@dataclass
class FactorizationResult:
    """Ordered factors, leftmost first; ``residual`` is the sup distance of their composition to the target."""

    variant: str
    grid: Grid
    factors: list
    residual: float = float("nan")
    iterations: int = 0
    extras: dict = field(default_factory=dict)

    def factor_field(self, factor: Factor) -> VectorField:
        spline = GridSpline(_loose(self.grid), factor.values[..., None])
        n = self.grid.dim

        def fn(p, k=factor.axis, c=factor.coefficient):
            out = np.zeros_like(p)
            out[:, k] = spline.at_points(p)[:, 0] * c(p)
            return out

        return VectorField(fn, n, name=f"f{factor.axis + 1}*{factor.generator}")

    def recompose(self, settings: Optional[FlowSettings] = None) -> np.ndarray:
        """Node images of ``E_1 o ... o E_n``."""
        settings = settings or FlowSettings()
        pts = self.grid.nodes.reshape(-1, self.grid.dim)
        for factor in reversed(self.factors):
            pts = flow_points(self.factor_field(factor), 1.0, pts, settings)
        return pts.reshape(self.grid.shape + (self.grid.dim,))

    def coefficient_values(self) -> dict:
        """Full field coefficients ``f_k c_k`` at the nodes, keyed by generator."""
        nodes = self.grid.nodes.reshape(-1, self.grid.dim)
        out = {}
        for f in self.factors:
            out[f"{f.generator}"] = f.values * f.coefficient(nodes).reshape(self.grid.shape)
        return out

    def to_json(self) -> dict:
        return {
            "variant": self.variant,
            "grid": self.grid.to_json(),
            "factors": [
                {"axis": f.axis, "generator": f.generator, "iterations": f.iterations, "values": f.values.ravel().tolist()}
                for f in self.factors
            ],
            "residual": self.residual,
            "iterations": self.iterations,
            "extras": {k: (v.ravel().tolist() if isinstance(v, np.ndarray) else v) for k, v in self.extras.items()},
        }


def _loose(grid: Grid) -> Grid:
    return Grid(grid.kind, grid.axes, max(grid.margin, EXTRAPOLATION))


def _one(p):
    return np.ones(len(p))


def _last_coordinate(p):
    return p[:, -1].copy()


def _axis_limit(r: np.ndarray, grid: Grid, axis: int) -> np.ndarray:
    """One-sided derivative of node data along ``axis`` at its lower end (second order)."""
    h = grid.axes[axis].spacing
    r0 = np.take(r, 0, axis=axis)
    r1 = np.take(r, 1, axis=axis)
    r2 = np.take(r, 2, axis=axis)
    return (-3 * r0 + 4 * r1 - r2) / (2 * h)


def _divide(r, c, grid, axis):
    """``r / c`` at nodes; where ``c`` vanishes on the lower face of ``axis``, the limit ``dr/dx_axis``."""
    out = np.zeros_like(r)
    zero = c == 0
    out[~zero] = r[~zero] / c[~zero]
    if zero.any():
        limit = _axis_limit(r, grid, axis)
        face = np.zeros(r.shape, bool)
        index = [slice(None)] * r.ndim
        index[axis] = 0
        face[tuple(index)] = True
        if np.any(zero & ~face):
            raise PreconditionError("frame coefficient vanishes away from the lower face")
        dc = _axis_limit(c, grid, axis)
        out[tuple(index)] = limit / np.where(dc == 0, 1.0, dc)
    return out


def _line_problem(grid: Grid, axis: int):
    """Cardinal cubic basis along ``axis`` on the extrapolating grid, as a 1D spline."""
    loose = _loose(grid)
    ax = loose.axes[axis]
    line = Grid("box", (ax,), loose.margin)
    return GridSpline(line, np.eye(ax.n)), ax


def _solve_coordinate(grid, m, axis, coefficient, generator, settings: SolverSettings) -> Factor:
    """Find ``f`` on the nodes with ``e^{f c e_axis}`` moving every node's coordinate ``axis`` to ``m``.

    At node coordinates of the other axes the tensor spline of ``f`` reduces
    to the 1D spline of each grid line, so the problem splits into
    independent line problems. The correction applied to the residual is
    the inverse of the exact line Jacobian ``d flow / d f``, obtained from
    the variational equation integrated alongside the flow.
    """
    dim = grid.dim
    shape = grid.shape
    nodes = grid.nodes.reshape(-1, dim)
    m = np.asarray(m).reshape(shape)
    if np.any(np.diff(m, axis=axis) <= 0):
        raise PreconditionError(f"coordinate map {axis + 1} is not monotone along its axis")
    c_nodes = coefficient(nodes).reshape(shape)
    # work with lines along the last axis: (lines, n)
    lines = np.moveaxis(grid.nodes, axis, -2).reshape(-1, shape[axis], dim)
    n_lines, n = lines.shape[:2]
    target = np.moveaxis(m, axis, -1).reshape(n_lines, n)
    c_lines = np.moveaxis(c_nodes, axis, -1).reshape(n_lines, n)
    stationary = c_lines == 0
    if np.any(stationary[:, 1:]):
        raise PreconditionError("frame coefficient vanishes away from the lower face")
    basis, _ = _line_problem(grid, axis)
    start = lines.reshape(-1, dim)
    owner = np.repeat(np.arange(n_lines), n)
    smooth = np.array([1.0, -4.0, 6.0, -4.0, 1.0])  # zero fourth difference at stationary rows

    def dc(points):
        h = 1e-6
        e = np.zeros(dim)
        e[axis] = h
        return (coefficient(points + e) - coefficient(points - e)) / (2 * h)

    loose = _loose(grid)
    other = tuple(np.delete(shape, axis))

    def to_grid(v):
        return np.moveaxis(v.reshape(other + (n,)), -1, axis)

    def rhs_position(v):
        spline = GridSpline(loose, to_grid(v)[..., None])

        def rhs(_, y):
            pts = start.copy()
            pts[:, axis] = y[:, 0]
            return spline.at_points(pts) * coefficient(pts)[:, None]

        return rhs

    def sensitivity(v):
        """Jacobian of the node images with respect to ``v``, per line."""
        vv = v[owner]

        def rhs(_, y):
            pts = start.copy()
            pts[:, axis] = y[:, 0]
            b = basis(_line_param(basis, y[:, 0]))
            db = basis(_line_param(basis, y[:, 0]), deriv=(1,))
            sv = np.einsum("ij,ij->i", b, vv)
            c = coefficient(pts)
            df = np.einsum("ij,ij->i", db, vv) * c + sv * dc(pts)
            out = np.empty_like(y)
            out[:, 0] = sv * c
            out[:, 1:] = df[:, None] * y[:, 1:] + c[:, None] * b
            return out

        y0 = np.concatenate([start[:, axis : axis + 1], np.zeros((len(start), n))], axis=1)
        y, _ = integrate(rhs, y0, 0.0, 1.0, JACOBIAN_FLOW)
        jac = y[:, 1:].reshape(n_lines, n, n)
        rows = np.nonzero(stationary[:, 0])[0]
        jac[rows, 0, :] = 0.0
        jac[rows, 0, :5] = smooth
        return jac

    v = np.zeros((n_lines, n))
    best, best_v, best_it, stale = np.inf, v, 0, 0
    jac, previous = None, np.inf
    for it in range(settings.max_iter + 1):
        moved = integrate(rhs_position(v), start[:, axis : axis + 1], 0.0, 1.0, settings.flow)[0]
        r = target - moved.reshape(n_lines, n)
        err = float(np.max(np.abs(r)))
        if not np.isfinite(err):
            break
        if err < best:
            best, best_v, best_it, stale = err, v, it, 0
        else:
            stale += 1
        if best <= settings.tol or stale >= settings.patience:
            break
        # modified Newton: refresh the Jacobian only when contraction degrades
        if jac is None or err > 0.5 * previous:
            jac = sensitivity(v)
        previous = err
        rows = np.nonzero(stationary[:, 0])[0]
        r[rows, 0] = -(v[rows, :5] @ smooth)
        try:
            step = np.linalg.solve(jac, r[..., None])[..., 0]
        except np.linalg.LinAlgError:
            raise ConvergenceError(f"singular line Jacobian for coordinate {axis + 1}") from None
        v = v + settings.beta * step
    if best > max(settings.tol, settings.accept):
        raise ConvergenceError(f"iteration for coordinate {axis + 1} stalled at residual {best:.3e}")
    return Factor(axis, generator, coefficient, to_grid(best_v), best_it, best)


def _line_param(spline: GridSpline, x: np.ndarray) -> np.ndarray:
    return spline.grid.to_param(x[:, None])


def _triangular(target: DiscreteDiffeomorphism, frame, settings: SolverSettings, variant: str) -> FactorizationResult:
    grid = target.grid
    if grid.kind != "box":
        raise PreconditionError("factorization needs a box grid")
    dist = target.sup_distance()
    if dist > settings.near_identity:
        raise PreconditionError(f"target is {dist:.3g} from the identity, beyond {settings.near_identity}")
    n = grid.dim
    nodes = grid.nodes.reshape(-1, n)
    phi = target.extrapolating(EXTRAPOLATION)
    factors = []
    images = nodes.copy()  # G applied to the nodes
    for k in range(n - 1, -1, -1):
        coefficient, generator = frame[k]
        if factors:
            g = DiscreteDiffeomorphism(_loose(grid), images.reshape(grid.shape + (n,)))
            pre = g.inverse_points(nodes)
        else:
            pre = nodes
        m = phi(pre)[:, k]
        factor = _solve_coordinate(grid, m, k, coefficient, generator, settings)
        factors.insert(0, factor)
        result = FactorizationResult(variant, grid, [factor])
        images = flow_points(result.factor_field(factor), 1.0, images, settings.flow)
    result = FactorizationResult(variant, grid, factors, iterations=sum(f.iterations for f in factors))
    result.residual = float(np.max(np.abs(result.recompose(settings.flow) - target.values)))
    return result


def _check_fixes_origin(target: DiscreteDiffeomorphism):
    origin = np.zeros((1, target.dim))
    if target.grid.contains(origin).all():
        drift = float(np.max(np.abs(target(origin))))
        if drift > 1e-8:
            raise PreconditionError(f"target moves the origin by {drift:.3e}")


def factorize_interior(target: DiscreteDiffeomorphism, settings: SolverSettings = SolverSettings()) -> FactorizationResult:
    """Factor along the coordinate frame ``d/dx_1, ..., d/dx_n``."""
    _check_fixes_origin(target)
    frame = [(_one, f"d{k + 1}") for k in range(target.dim)]
    return _triangular(target, frame, settings, "interior")


def _quotient_by_height(values: np.ndarray, grid: Grid) -> np.ndarray:
    """``values / x_n`` at nodes, using the one-sided derivative on ``x_n = 0``."""
    xn = grid.nodes[..., -1]
    return _divide(values, xn, grid, grid.dim - 1)


def factorize_boundary(
    target: DiscreteDiffeomorphism,
    zhat: Optional[VectorField] = None,
    settings: SolverSettings = SolverSettings(),
    v0_halfwidth: float = 1.0,
) -> FactorizationResult:
    """Factor a boundary-preserving target as ``e^{f_1 d_1} o ... o e^{f_(n-1) d_(n-1)} o e^{g_hat phi Z}``.

    ``Z`` must have the form ``c(x) d/dx_n`` with ``c(0) != 0``; ``phi`` is the
    transversal cutoff at the origin and must equal one on the grid. The
    normal factor coefficient ``g_hat`` is required to vanish on the boundary;
    ``g = g_hat / x_n`` is returned in ``extras``.
    """
    grid = target.grid
    n = grid.dim
    model = HalfSpacePatch(n)
    if zhat is None:
        zhat = VectorField.constant(np.eye(n)[-1])
    nodes = grid.nodes.reshape(-1, n)
    zvals = zhat(nodes)
    if np.max(np.abs(zvals[:, :-1])) > 0:
        raise PreconditionError("transversal field must be a multiple of d/dx_n")
    phi = build_varphi(model, zhat, np.zeros(n), v0_halfwidth)
    phi_nodes = phi(nodes).reshape(grid.shape)
    # the normal factor moves each node along x_n to its target height; those
    # segments must stay where phi = 1, since the solve uses c(x) d/dx_n alone
    ends = nodes.copy()
    ends[:, -1] = target.values.reshape(-1, n)[:, -1]
    if min(np.min(phi_nodes), np.min(phi(ends))) < 1.0 - 1e-12:
        raise PreconditionError("the grid extends beyond the plateau of the transversal cutoff")
    frame = [(_one, f"d{k + 1}") for k in range(n - 1)] + [(lambda p: zhat(p)[:, -1], "phi*Zhat")]
    result = _triangular(target, frame, settings, "boundary")
    h = result.factors[-1].values
    g_hat = h / phi_nodes
    on_boundary = np.take(g_hat, 0, axis=n - 1)
    worst = float(np.max(np.abs(on_boundary)))
    if worst > 1e-8:
        raise PreconditionError(f"normal factor does not vanish on the boundary ({worst:.3e}); target moves the boundary")
    g = _quotient_by_height(g_hat, grid)
    result.extras.update(
        g_hat=g_hat,
        g=g,
        g_hat_boundary_max=worst,
        g_sup=float(np.max(np.abs(g))),
        phi_radius=phi.radius,
        phi_epsilon=phi.epsilon,
    )
    return result


def factorize_boundary_fixing(
    target: DiscreteDiffeomorphism, settings: SolverSettings = SolverSettings()
) -> FactorizationResult:
    """Factor a target equal to the identity on ``x_n = 0`` along ``d_1, ..., d_(n-1), x_n d_n``."""
    grid = target.grid
    n = grid.dim
    face = np.take(target.values - grid.nodes, 0, axis=n - 1)
    if np.max(np.abs(face)) > 1e-9:
        raise PreconditionError("target is not the identity on the boundary face")
    frame = [(_one, f"d{k + 1}") for k in range(n - 1)] + [(_last_coordinate, f"x{n}*d{n}")]
    result = _triangular(target, frame, settings, "boundary_fixing")
    nodes = grid.nodes.reshape(-1, n)
    f_hat = [f.values * f.coefficient(nodes).reshape(grid.shape) for f in result.factors]
    boundary_max = max(float(np.max(np.abs(np.take(fh, 0, axis=n - 1)))) for fh in f_hat)
    if boundary_max > 1e-8:
        raise PreconditionError(f"solved coefficients do not vanish on the boundary ({boundary_max:.3e})")
    f_reduced = [_quotient_by_height(fh, grid) for fh in f_hat]
    result.extras.update(
        f_hat_boundary_max=boundary_max,
        f_reduced_sup=max(float(np.max(np.abs(fr))) for fr in f_reduced),
    )
    for k, fr in enumerate(f_reduced):
        result.extras[f"f{k + 1}_reduced"] = fr
    return result


VARIANTS = ("interior", "boundary", "boundary_fixing")


def variant_grid(variant: str, dim: int) -> Grid:
    """Default sampling grid: a centered box inside, a thin slab on ``x_n >= 0`` for the boundary variants."""
    if variant == "interior":
        return Grid.box([-0.5] * dim, [0.5] * dim, [65] if dim == 1 else [33] * dim)
    if variant in VARIANTS:
        if dim != 2:
            raise PreconditionError("boundary variants are implemented for n = 2")
        return Grid.box([-0.2, 0.0], [0.2, 0.2], [33, 33])
    raise PreconditionError(f"unknown variant {variant!r}")


def _basis(p: np.ndarray) -> np.ndarray:
    """Smooth functions vanishing at the origin, stacked on the last axis."""
    x = p[:, 0]
    if p.shape[1] == 1:
        return np.stack([x, x * x, np.sin(3 * x), x * np.cos(2 * x)], axis=-1)
    y = p[:, 1]
    return np.stack([x, y, x * y, x * x, y * y, np.sin(x + 2 * y), x * np.cos(3 * y)], axis=-1)


def random_target(
    variant: str, dim: int, rng, amplitude: float = 0.04, max_slope: float = 0.1
) -> DiscreteDiffeomorphism:
    """Random near-identity target of the kind each variant accepts.

    The displacement is a random combination of :func:`_basis` rescaled so
    its sup norm is at most ``amplitude`` and its derivative at most
    ``max_slope`` on the grid. The boundary variants multiply the
    normal component by ``x_n`` (boundary preserved); the fixing variant
    multiplies every component by ``x_n`` (boundary fixed).
    """
    grid = variant_grid(variant, dim)
    nodes = grid.nodes.reshape(-1, dim)
    weights = rng.standard_normal((_basis(nodes).shape[1], dim))
    shift = rng.standard_normal(dim) if variant == "boundary" else np.zeros(dim)

    def raw(p):
        d = _basis(p) @ weights + 0.1 * shift
        if variant == "boundary":
            d[:, -1] *= p[:, -1]
        elif variant == "boundary_fixing":
            d *= p[:, -1:]
        return d

    d = raw(nodes).reshape(grid.shape + (dim,))
    steps = [ax.spacing for ax in grid.axes]
    slope = max(float(np.max(np.abs(np.gradient(d[..., j], steps[k], axis=k)))) for j in range(dim) for k in range(dim))
    scale = min(amplitude / np.max(np.abs(d)), max_slope / slope)
    return DiscreteDiffeomorphism.from_function(grid, lambda p: p + scale * raw(p))
