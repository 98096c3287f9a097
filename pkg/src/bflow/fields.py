"""Scalar and vector fields in chart coordinates, brackets, module spans and cutoffs.

Fields are vectorized callables: they take a batch of points ``(N, d)`` and
return ``(N,)`` (scalars) or ``(N, d)`` (vectors). A single point ``(d,)`` is
also accepted and yields an unbatched result.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from bflow.errors import DomainError, PreconditionError
from bflow.geometry import (
    HalfSpacePatch,
    ManifoldModel,
    MetricSpec,
    PointClass,
    classify_point,
    euclidean_metric,
    outward_normal,
)
from bflow.interp import Grid, GridSpline


def _batch(points):
    p = np.asarray(points, dtype=float)
    if p.ndim == 1:
        return p[None, :], True
    return p, False


class ScalarField:
    def __init__(self, fn: Callable, name: str = "f"):
        self.fn = fn
        self.name = name

    def __call__(self, points):
        p, single = _batch(points)
        out = np.broadcast_to(np.asarray(self.fn(p), dtype=float), (len(p),))
        return out[0] if single else np.array(out)

    @classmethod
    def constant(cls, c: float) -> "ScalarField":
        return cls(lambda p: np.full(len(p), float(c)), name=repr(float(c)))

    @classmethod
    def coordinate(cls, k: int) -> "ScalarField":
        return cls(lambda p: p[:, k].copy(), name=f"x{k + 1}")

    @classmethod
    def from_samples(cls, grid: Grid, values, name="sampled") -> "ScalarField":
        spline = GridSpline(grid, np.asarray(values, dtype=float)[..., None])
        return cls(lambda p: spline.at_points(p)[:, 0], name=name)

    def __mul__(self, other):
        if isinstance(other, VectorField):
            return other.times(self)
        if isinstance(other, ScalarField):
            return ScalarField(lambda p: self.fn(p) * other.fn(p), f"{self.name}*{other.name}")
        c = float(other)
        return ScalarField(lambda p: c * self.fn(p), f"{c!r}*{self.name}")

    __rmul__ = __mul__

    def __add__(self, other):
        other = other if isinstance(other, ScalarField) else ScalarField.constant(other)
        return ScalarField(lambda p: self.fn(p) + other.fn(p), f"{self.name}+{other.name}")

    def __neg__(self):
        return ScalarField(lambda p: -self.fn(p), f"-{self.name}")

    def __repr__(self):
        return f"ScalarField({self.name})"


class VectorField:
    """A vector field with metadata.

    ``tangent`` declares boundary tangency; ``support`` is an optional
    vectorized predicate that is ``False`` only where the field vanishes, used
    by the flow engine to skip stationary nodes.
    """

    def __init__(
        self,
        fn: Callable,
        dim: int,
        tangent: bool = False,
        support: Optional[Callable] = None,
        name: str = "X",
    ):
        self.fn = fn
        self.dim = dim
        self.tangent = tangent
        self.support = support
        self.name = name

    def __call__(self, points):
        p, single = _batch(points)
        if p.shape[1] != self.dim:
            raise DomainError(f"field {self.name} of dimension {self.dim} evaluated at {p.shape[1]}-points")
        out = np.asarray(self.fn(p), dtype=float).reshape(len(p), self.dim)
        return out[0] if single else out

    # constructors

    @classmethod
    def zero(cls, dim: int) -> "VectorField":
        return cls(lambda p: np.zeros_like(p), dim, True, lambda p: np.zeros(len(p), bool), "0")

    @classmethod
    def constant(cls, v, tangent=False) -> "VectorField":
        v = np.asarray(v, dtype=float)
        return cls(lambda p: np.broadcast_to(v, p.shape).copy(), len(v), tangent, name=f"const{v.tolist()}")

    @classmethod
    def from_components(cls, comps: Sequence[Callable], tangent=False, name="X") -> "VectorField":
        """Field from per-component scalar callables of the point batch."""

        def fn(p):
            return np.stack([np.broadcast_to(c(p), (len(p),)) for c in comps], axis=-1)

        return cls(fn, len(comps), tangent, name=name)

    @classmethod
    def from_samples(cls, grid: Grid, values, tangent=False, name="sampled") -> "VectorField":
        """Cubic interpolant of node values ``grid.shape + (dim,)``."""
        values = np.asarray(values, dtype=float)
        spline = GridSpline(grid, values)
        return cls(spline.at_points, values.shape[-1], tangent, name=name)

    # algebra

    def __add__(self, other: "VectorField") -> "VectorField":
        return VectorField(
            lambda p: self.fn(p) + other.fn(p),
            self.dim,
            self.tangent and other.tangent,
            _union(self.support, other.support),
            f"({self.name}+{other.name})",
        )

    def __sub__(self, other: "VectorField") -> "VectorField":
        return self + (-1.0) * other

    def __neg__(self):
        return (-1.0) * self

    def __rmul__(self, c):
        if isinstance(c, ScalarField):
            return self.times(c)
        c = float(c)
        return VectorField(lambda p: c * self.fn(p), self.dim, self.tangent, self.support, f"{c!r}*{self.name}")

    def times(self, f: ScalarField) -> "VectorField":
        return VectorField(
            lambda p: np.asarray(f.fn(p))[:, None] * self.fn(p),
            self.dim,
            self.tangent,
            self.support,
            f"{f.name}*{self.name}",
        )

    def with_support(self, support: Callable) -> "VectorField":
        return VectorField(self.fn, self.dim, self.tangent, support, self.name)

    def declared(self, tangent: bool) -> "VectorField":
        return VectorField(self.fn, self.dim, tangent, self.support, self.name)

    def __repr__(self):
        return f"VectorField({self.name}, dim={self.dim}, tangent={self.tangent})"


def _union(a, b):
    if a is None or b is None:
        return None
    return lambda p: a(p) | b(p)


@dataclass
class ModuleSpanElement:
    """Finite sum ``sum_j f_j Y_j`` over scalar coefficients and generator fields."""

    terms: list = field(default_factory=list)
    dim: Optional[int] = None

    def __call__(self, points):
        return module_span_eval(self, points)

    def as_field(self) -> VectorField:
        dim = self.dim if self.dim is not None else self.terms[0][1].dim
        tangent = all(y.tangent for _, y in self.terms)
        return VectorField(lambda p: module_span_eval(self, p), dim, tangent, name="span")


def module_span_eval(elem: ModuleSpanElement, p) -> np.ndarray:
    q, single = _batch(p)
    dim = elem.dim if elem.dim is not None else q.shape[1]
    out = np.zeros((len(q), dim))
    for f, y in elem.terms:
        coef = f(q) if isinstance(f, ScalarField) else np.full(len(q), float(f))
        out += np.asarray(coef)[:, None] * y(q)
    return out[0] if single else out


# --- finite differences ------------------------------------------------------------


def fd_jacobian(f: Callable, points, h: float, order: int = 2) -> np.ndarray:
    """Jacobians ``J[n, i, j] = d f_i / d x_j`` of a vectorized map at a batch of points.

    Central differences of order 2 (3-point) or 4 (5-point).
    """
    p, single = _batch(points)
    n, d = p.shape
    offsets = {2: ((1, 0.5), (-1, -0.5)), 4: ((2, -1 / 12), (1, 8 / 12), (-1, -8 / 12), (-2, 1 / 12))}[order]
    stack = []
    for j in range(d):
        for k, _ in offsets:
            q = p.copy()
            q[:, j] += k * h
            stack.append(q)
    vals = np.asarray(f(np.concatenate(stack))).reshape(d, len(offsets), n, -1)
    weights = np.array([w for _, w in offsets])
    jac = np.einsum("k,jkni->nij", weights, vals) / h
    return jac[0] if single else jac


def lie_bracket(x: VectorField, y: VectorField, p, h_fd: Optional[float] = None, model=None, order=2):
    """``[X, Y](p) = DY(p) X(p) - DX(p) Y(p)`` by central differences.

    With ``model`` given the stencil must stay in its chart domain.
    """
    q, single = _batch(p)
    h = 1e-5 * (model.chart_scale if model is not None else 1.0) if h_fd is None else h_fd
    if model is not None:
        reach = h * (2 if order == 4 else 1)
        for j in range(q.shape[1]):
            for s in (reach, -reach):
                shifted = q.copy()
                shifted[:, j] += s
                if not np.all(model.in_chart(shifted, tol=0.0)):
                    raise DomainError("finite-difference stencil leaves the chart domain")
    dx = fd_jacobian(x, q, h, order)
    dy = fd_jacobian(y, q, h, order)
    out = np.einsum("nij,nj->ni", dy, x(q)) - np.einsum("nij,nj->ni", dx, y(q))
    return out[0] if single else out


def bracket_field(x: VectorField, y: VectorField, h_fd=1e-4, order=4) -> VectorField:
    """The bracket as a field, for nesting; uses 4th-order stencils by default."""
    return VectorField(
        lambda p: lie_bracket(x, y, p, h_fd, order=order),
        x.dim,
        x.tangent and y.tangent,
        name=f"[{x.name},{y.name}]",
    )


def pushforward(phi, y: VectorField, p) -> np.ndarray:
    """``Dphi(q) Y(q)`` with ``q = phi^{-1}(p)``; ``phi`` is a discrete diffeomorphism."""
    q = phi.inverse_points(np.atleast_2d(np.asarray(p, dtype=float)))
    jac = phi.jacobian(q)
    sv = np.linalg.svd(jac, compute_uv=False)
    if np.any(sv[:, -1] <= 1e-8 * sv[:, 0]):
        raise DomainError("Jacobian is numerically singular at the preimage")
    out = np.einsum("nij,nj->ni", jac, y(q))
    return out[0] if np.ndim(p) == 1 else out


def is_tangent_to_boundary(
    x: VectorField,
    model: ManifoldModel,
    metric: Optional[MetricSpec] = None,
    n_samples: int = 1000,
    tol: float = 1e-9,
    rng=None,
):
    """Return ``(tangent, max |g(X(b), nu(b))|)`` over boundary samples."""
    metric = metric or euclidean_metric(model.dim)
    samples = model.boundary_samples(n_samples, rng)
    if len(samples) == 0:
        return True, 0.0
    vals = x(samples)
    worst = 0.0
    for b, v in zip(samples, vals):
        nu = outward_normal(model, metric, b)
        worst = max(worst, abs(float(v @ metric(b) @ nu)))
    return worst <= tol, worst


# --- smooth cutoffs ------------------------------------------------------------------


def _flat(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    with np.errstate(over="ignore"):
        out[pos] = np.exp(-1.0 / t[pos])
    return out


def smoothstep(t):
    """C-infinity step: exactly 0 for ``t <= 0``, exactly 1 for ``t >= 1``."""
    a = _flat(t)
    b = _flat(1.0 - np.asarray(t, dtype=float))
    return a / (a + b)


def plateau_bump(u):
    """Radial bump equal to 1 for ``|u| <= 1/2`` and 0 for ``|u| >= 1``."""
    return 1.0 - smoothstep(2.0 * np.abs(u) - 1.0)


@dataclass(frozen=True)
class CutoffChi:
    collar: object

    def profile(self, r):
        c = self.collar
        return 1.0 - smoothstep((np.asarray(r, dtype=float) - c.s) / (c.s_prime - c.s))

    def __call__(self, points):
        p, single = _batch(points)
        _, r, inside = self.collar.inverse(p)
        out = np.where(inside, self.profile(np.maximum(r, 0.0)), 0.0)
        return out[0] if single else out

    def as_scalar(self) -> ScalarField:
        return ScalarField(self.__call__, "chi")


def build_chi(collar) -> CutoffChi:
    if not 0 < collar.s < collar.s_prime < collar.r_max:
        raise ValueError("collar radii must satisfy 0 < s < s' < r_max")
    return CutoffChi(collar)


@dataclass
class TransversalCutoffPhi:
    """Bump adapted to the flow-out of a boundary patch along a transversal field.

    ``V'`` is the boundary ball of radius ``radius`` about ``center``; the
    flow-out ``V1 = {e^{t Z}(b) : b in V', |t| < epsilon}`` is parametrized by
    flow coordinates and ``phi = beta(|b - center| / radius) beta(t / epsilon)``.
    """

    model: HalfSpacePatch
    zhat: VectorField
    center: np.ndarray
    radius: float
    epsilon: float
    newton_tol: float = 1e-10
    sign: float = 1.0

    def flow_coords(self, points):
        """Invert ``(b, t) -> e^{tZ}(b)``; returns ``(b, t, converged)``."""
        from bflow.flows import flow_points

        p, _ = _batch(points)
        n = self.model.dim
        z0 = self.zhat(self.center)
        t = p[:, -1] / z0[-1]
        b = p[:, :-1] - t[:, None] * z0[None, :-1]
        ok = np.zeros(len(p), bool)
        h = 1e-6
        for _ in range(30):
            base = np.concatenate([b, np.zeros((len(p), 1))], axis=-1)
            x = flow_points(self.zhat, t, base)
            res = x - p
            ok = np.max(np.abs(res), axis=-1) <= self.newton_tol
            if ok.all():
                break
            cols = []
            for j in range(n - 1):
                shifted = base.copy()
                shifted[:, j] += h
                cols.append((flow_points(self.zhat, t, shifted) - x) / h)
            cols.append(self.zhat(x))
            jac = np.stack(cols, axis=-1)
            try:
                step = np.linalg.solve(jac, res[..., None])[..., 0]
            except np.linalg.LinAlgError:
                break
            b = b - step[:, :-1]
            t = t - step[:, -1]
        return b, t, ok

    def __call__(self, points):
        p, single = _batch(points)
        out = np.zeros(len(p))
        zmax = float(np.max(np.abs(self.zhat(p)))) if len(p) else 0.0
        reach = self.radius + self.epsilon * max(zmax, 1.0) * 2.0
        near = np.max(np.abs(p - self.center), axis=-1) < reach
        if near.any():
            b, t, ok = self.flow_coords(p[near])
            rad = np.linalg.norm(b - self.center[None, :-1], axis=-1) / self.radius
            out[near] = np.where(ok, plateau_bump(rad) * plateau_bump(t / self.epsilon), 0.0)
        return out[0] if single else out

    def as_scalar(self) -> ScalarField:
        return ScalarField(self.__call__, "phi")

    def sampled(self, grid: Grid) -> ScalarField:
        """Spline interpolant of ``phi`` on ``grid``; cheap to evaluate inside flows."""
        vals = self(grid.nodes.reshape(-1, grid.dim)).reshape(grid.shape)
        return ScalarField.from_samples(grid, vals, "phi_sampled")


def build_varphi(model: HalfSpacePatch, zhat: VectorField, x, v0_halfwidth=0.5) -> TransversalCutoffPhi:
    """Transversal cutoff about a boundary point ``x`` for a field with ``dx_n(Z)(x) != 0``."""
    from bflow.flows import flow_points

    if not isinstance(model, HalfSpacePatch):
        raise PreconditionError("the transversal cutoff is defined on half-space patches")
    x = np.asarray(x, dtype=float).reshape(-1)
    if classify_point(model, x) is not PointClass.BOUNDARY:
        raise PreconditionError(f"{x} is not a boundary point")
    a = float(zhat(x)[-1])
    if abs(a) <= 1e-8:
        raise PreconditionError(f"field is not transversal at {x}: dx_n(Z) = {a:.3e}")
    n = model.dim
    sign = np.sign(a)

    def in_v0(pts):
        return np.all(np.abs(pts - x) < v0_halfwidth, axis=-1)

    def ball(radius, k=9):
        if n == 1:
            return x[None, :]
        axes = np.meshgrid(*[np.linspace(-radius, radius, k)] * (n - 1), indexing="ij")
        off = np.stack([g.ravel() for g in axes], axis=-1)
        off = off[np.linalg.norm(off, axis=-1) <= radius + 1e-15]
        return np.concatenate([x[None, :-1] + off, np.zeros((len(off), 1))], axis=-1)

    radius = 0.5
    for _ in range(30):
        pts = ball(radius)
        zn = zhat(pts)[:, -1]
        if in_v0(pts).all() and np.all(sign * zn >= 0.5 * abs(a)):
            break
        radius /= 2
    else:
        raise PreconditionError("no boundary patch keeps the transversal sign")

    pts = ball(radius)
    eps = 0.5
    for _ in range(30):
        ts = np.linspace(-eps, eps, 9)
        inside = True
        for t in ts:
            if not in_v0(flow_points(zhat, np.full(len(pts), t), pts)).all():
                inside = False
                break
        if inside:
            break
        eps /= 2
    else:
        raise PreconditionError("no flow-time half-width keeps the patch inside the neighborhood")
    return TransversalCutoffPhi(model, zhat, x, radius, eps, sign=sign)
