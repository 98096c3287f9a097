"""Model manifolds with boundary, their collars, metrics and connections.

The catalog is fixed: the unit interval, the closed unit disk, a half-space
patch ``[-1, 1]^(n-1) x [0, 1]`` whose only boundary face is ``x_n = 0``, and
the closed Euclidean unit ball in odd dimension ``2n + 1``. The circle is
included as the boundary manifold of the disk; it has no boundary itself.

Points are arrays in chart coordinates. Functions that take "points" accept
a single point of shape ``(dim,)`` or a batch of shape ``(N, dim)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from bflow.errors import DomainError, PreconditionError
from bflow.interp import Grid

BOUNDARY_TOL = 1e-10


class PointClass(enum.Enum):
    INTERIOR = "interior"
    BOUNDARY = "boundary"
    OUTSIDE = "outside"


class _NotInCollar:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NOT_IN_COLLAR"

    def __bool__(self):
        return False


NOT_IN_COLLAR = _NotInCollar()


@dataclass(frozen=True)
class CollarCoords:
    b: np.ndarray
    r: float


@dataclass(frozen=True)
class CollarSpec:
    """Collar ``h: dM x [0, r_max) -> M`` with inner radii ``s < s_prime < r_max``.

    ``embed(b, r)`` maps boundary coordinates and collar depth to points;
    ``inverse(points)`` returns ``(b, r, inside)`` with ``inside`` marking
    points in the collar image.
    """

    embed: Callable
    inverse: Callable
    r_max: float
    s: float
    s_prime: float

    def __post_init__(self):
        if not 0 < self.s < self.s_prime < self.r_max:
            raise ValueError(
                f"collar radii must satisfy 0 < s < s' < r_max, got {self.s}, {self.s_prime}, {self.r_max}"
            )


def _as_batch(points, dim):
    p = np.asarray(points, dtype=float)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    if p.shape[-1] != dim:
        raise DomainError(f"expected points of dimension {dim}, got shape {np.shape(points)}")
    return p, single


class ManifoldModel:
    """Base class of the model catalog."""

    kind: str = ""
    dim: int = 0
    collar: Optional[CollarSpec] = None
    chart_scale: float = 1.0
    has_boundary = True

    def rho(self, points) -> np.ndarray:
        raise NotImplementedError

    def rho_grad(self, points) -> np.ndarray:
        raise NotImplementedError

    def in_chart(self, points, tol=BOUNDARY_TOL) -> np.ndarray:
        raise NotImplementedError

    def project_to_boundary(self, points) -> np.ndarray:
        raise NotImplementedError

    def boundary_samples(self, n, rng=None) -> np.ndarray:
        raise NotImplementedError

    def default_grid(self) -> Grid:
        raise NotImplementedError

    def boundary_tangent_basis(self, b) -> np.ndarray:
        """Euclidean orthonormal basis of the tangent space of the boundary at ``b``, rows."""
        grad = self.rho_grad(np.asarray(b, dtype=float))
        grad = grad / np.linalg.norm(grad)
        _, _, vt = np.linalg.svd(grad[None, :])
        return vt[1:]

    def on_boundary(self, points, tol=BOUNDARY_TOL) -> np.ndarray:
        p, _ = _as_batch(points, self.dim)
        return (np.abs(self.rho(p)) <= tol) & self.in_chart(p, tol)

    def to_json(self) -> dict:
        return {"kind": self.kind}

    def __repr__(self):
        return f"{type(self).__name__}()"


class Interval01(ManifoldModel):
    kind = "interval"
    dim = 1

    def __init__(self, r_max=0.45, s_prime=0.3, s=0.15):
        def embed(b, r):
            b = np.asarray(b, dtype=float).reshape(-1)
            r = np.asarray(r, dtype=float).reshape(-1)
            return np.where(b < 0.5, b + r, b - r)[:, None]

        def inverse(points):
            x = np.asarray(points, dtype=float).reshape(-1)
            b = np.where(x < 0.5, 0.0, 1.0)
            r = np.abs(x - b)
            return b[:, None], r, r < r_max

        self.collar = CollarSpec(embed, inverse, r_max, s, s_prime)

    def rho(self, points):
        x = np.asarray(points, dtype=float)[..., 0]
        return x * (1.0 - x)

    def rho_grad(self, points):
        x = np.asarray(points, dtype=float)[..., :1]
        return 1.0 - 2.0 * x

    def in_chart(self, points, tol=BOUNDARY_TOL):
        x = np.asarray(points, dtype=float)[..., 0]
        return (x >= -tol) & (x <= 1.0 + tol)

    def project_to_boundary(self, points):
        x = np.asarray(points, dtype=float)
        return np.where(x < 0.5, 0.0, 1.0)

    def boundary_samples(self, n, rng=None):
        return np.resize(np.array([[0.0], [1.0]]), (n, 1))

    def default_grid(self):
        return Grid.box(0.0, 1.0, 512)


class DiskD2(ManifoldModel):
    """Closed unit disk with the polar collar ``(theta, r) -> (1 - r)(cos theta, sin theta)``."""

    kind = "disk"
    dim = 2

    def __init__(self, r_max=0.75, s_prime=0.5, s=0.25):
        def embed(b, r):
            th = np.asarray(b, dtype=float).reshape(-1)
            r = np.asarray(r, dtype=float).reshape(-1)
            return np.stack([(1 - r) * np.cos(th), (1 - r) * np.sin(th)], axis=-1)

        def inverse(points):
            p = np.atleast_2d(np.asarray(points, dtype=float))
            th = np.mod(np.arctan2(p[:, 1], p[:, 0]), 2 * np.pi)
            r = 1.0 - np.hypot(p[:, 0], p[:, 1])
            return th[:, None], r, r < r_max

        self.collar = CollarSpec(embed, inverse, r_max, s, s_prime)

    def rho(self, points):
        p = np.asarray(points, dtype=float)
        return 1.0 - np.sum(p * p, axis=-1)

    def rho_grad(self, points):
        return -2.0 * np.asarray(points, dtype=float)

    def in_chart(self, points, tol=BOUNDARY_TOL):
        p = np.asarray(points, dtype=float)
        return np.hypot(p[..., 0], p[..., 1]) <= 1.0 + tol

    def project_to_boundary(self, points):
        p = np.asarray(points, dtype=float)
        return p / np.linalg.norm(p, axis=-1, keepdims=True)

    def boundary_samples(self, n, rng=None):
        th = 2 * np.pi * np.arange(n) / n
        return np.stack([np.cos(th), np.sin(th)], axis=-1)

    def default_grid(self):
        return Grid.polar(128, 128, 0.0, 1.0)


class HalfSpacePatch(ManifoldModel):
    """Box ``[-1, 1]^(n-1) x [0, 1]``; only the face ``x_n = 0`` is boundary."""

    kind = "halfspace"

    def __init__(self, n=2, r_max=0.75, s_prime=0.5, s=0.25):
        if n < 1:
            raise ValueError("dimension must be at least 1")
        self.dim = n

        def embed(b, r):
            b = np.asarray(b, dtype=float).reshape(-1, n - 1)
            r = np.asarray(r, dtype=float).reshape(-1, 1)
            return np.concatenate([b, r], axis=-1)

        def inverse(points):
            p = np.atleast_2d(np.asarray(points, dtype=float))
            return p[:, :-1], p[:, -1], p[:, -1] < r_max

        self.collar = CollarSpec(embed, inverse, r_max, s, s_prime)

    def rho(self, points):
        return np.asarray(points, dtype=float)[..., -1]

    def rho_grad(self, points):
        g = np.zeros_like(np.asarray(points, dtype=float))
        g[..., -1] = 1.0
        return g

    def in_chart(self, points, tol=BOUNDARY_TOL):
        p = np.asarray(points, dtype=float)
        lateral = np.all(np.abs(p[..., :-1]) <= 1.0 + tol, axis=-1)
        return lateral & (p[..., -1] >= -tol) & (p[..., -1] <= 1.0 + tol)

    def near_artificial_faces(self, points, width=0.1):
        """Mask of points within ``width`` of a lateral face or the top face."""
        p = np.asarray(points, dtype=float)
        lateral = np.any(np.abs(p[..., :-1]) >= 1.0 - width, axis=-1)
        return lateral | (p[..., -1] >= 1.0 - width)

    def project_to_boundary(self, points):
        p = np.array(points, dtype=float)
        p[..., -1] = 0.0
        return p

    def boundary_samples(self, n, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        b = rng.uniform(-1, 1, size=(n, self.dim - 1))
        return np.concatenate([b, np.zeros((n, 1))], axis=-1)

    def default_grid(self):
        if self.dim == 1:
            return Grid.box(0.0, 1.0, 512)
        if self.dim == 2:
            return Grid.box([-1.0, 0.0], [1.0, 1.0], [128, 128])
        raise ValueError("grids exist for half-space patches of dimension 1 and 2 only")

    def to_json(self):
        return {"kind": self.kind, "n": self.dim}

    def __repr__(self):
        return f"HalfSpacePatch(n={self.dim})"


class EuclideanBall(ManifoldModel):
    """Closed unit ball in ``R^(2n+1)``, the ambient of the Heisenberg frames."""

    kind = "ball"

    def __init__(self, n=1, r_max=0.75, s_prime=0.5, s=0.25):
        if n < 1:
            raise ValueError("n must be at least 1")
        self.n = n
        self.dim = 2 * n + 1

        def embed(b, r):
            b = np.atleast_2d(np.asarray(b, dtype=float))
            r = np.asarray(r, dtype=float).reshape(-1, 1)
            return (1 - r) * b

        def inverse(points):
            p = np.atleast_2d(np.asarray(points, dtype=float))
            norm = np.linalg.norm(p, axis=-1)
            with np.errstate(invalid="ignore", divide="ignore"):
                b = p / norm[:, None]
            return b, 1.0 - norm, (1.0 - norm) < r_max

        self.collar = CollarSpec(embed, inverse, r_max, s, s_prime)

    def rho(self, points):
        p = np.asarray(points, dtype=float)
        return 1.0 - np.sum(p * p, axis=-1)

    def rho_grad(self, points):
        return -2.0 * np.asarray(points, dtype=float)

    def in_chart(self, points, tol=BOUNDARY_TOL):
        return np.linalg.norm(np.asarray(points, dtype=float), axis=-1) <= 1.0 + tol

    def project_to_boundary(self, points):
        p = np.asarray(points, dtype=float)
        return p / np.linalg.norm(p, axis=-1, keepdims=True)

    def boundary_samples(self, n, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        v = rng.standard_normal((n, self.dim))
        return v / np.linalg.norm(v, axis=-1, keepdims=True)

    def default_grid(self):
        raise ValueError("the ball model has no sampling grid")

    def to_json(self):
        return {"kind": self.kind, "n": self.n}

    def __repr__(self):
        return f"EuclideanBall(n={self.n})"


class Circle(ManifoldModel):
    """Circle of a given period in the lifted coordinate; the boundary of the disk."""

    kind = "circle"
    dim = 1
    has_boundary = False

    def __init__(self, period=2 * np.pi):
        self.period = float(period)
        self.chart_scale = self.period

    def rho(self, points):
        return np.ones(np.asarray(points, dtype=float).shape[:-1])

    def rho_grad(self, points):
        return np.zeros_like(np.asarray(points, dtype=float))

    def in_chart(self, points, tol=BOUNDARY_TOL):
        return np.all(np.isfinite(np.asarray(points, dtype=float)), axis=-1)

    def project_to_boundary(self, points):
        raise PreconditionError("the circle has no boundary")

    def boundary_samples(self, n, rng=None):
        return np.empty((0, 1))

    def default_grid(self):
        return Grid.circle(512, self.period)

    def to_json(self):
        return {"kind": self.kind, "period": self.period}

    def __repr__(self):
        return f"Circle(period={self.period!r})"


def model_from_json(obj) -> ManifoldModel:
    kind = obj["kind"]
    if kind == "interval":
        return Interval01()
    if kind == "disk":
        return DiskD2()
    if kind == "halfspace":
        return HalfSpacePatch(int(obj.get("n", 2)))
    if kind == "ball":
        return EuclideanBall(int(obj.get("n", 1)))
    if kind == "circle":
        return Circle(float(obj.get("period", 2 * np.pi)))
    raise ValueError(f"unknown model kind {kind!r}")


# --- point classification and collar coordinates --------------------------------


def classify_point(model: ManifoldModel, p) -> PointClass:
    p = np.asarray(p, dtype=float).reshape(-1)
    if p.shape[0] != model.dim:
        raise DomainError(f"point of dimension {p.shape[0]} given to a {model.dim}-dimensional model")
    if not np.all(np.isfinite(p)):
        raise DomainError(f"non-finite coordinates {p}")
    if not model.has_boundary:
        return PointClass.INTERIOR
    rho = float(model.rho(p))
    inside = bool(model.in_chart(p))
    if inside and abs(rho) <= BOUNDARY_TOL:
        return PointClass.BOUNDARY
    if inside and rho > BOUNDARY_TOL:
        return PointClass.INTERIOR
    return PointClass.OUTSIDE


def collar_coords(model: ManifoldModel, p):
    """Collar coordinates ``(b, r)`` of ``p``, or ``NOT_IN_COLLAR``."""
    cls = classify_point(model, p)
    if cls is PointClass.OUTSIDE:
        raise DomainError(f"point {p} is outside the model")
    b, r, inside = model.collar.inverse(np.asarray(p, dtype=float)[None, :])
    if not inside[0]:
        return NOT_IN_COLLAR
    return CollarCoords(b[0], max(float(r[0]), 0.0))


# --- metrics and connections ---------------------------------------------------


@dataclass(frozen=True)
class MetricSpec:
    """Riemannian metric in chart coordinates; ``g`` maps ``(N, d)`` points to ``(N, d, d)``."""

    g: Callable
    tag: str
    dim: int

    def __call__(self, points):
        p, single = _as_batch(points, self.dim)
        out = np.asarray(self.g(p), dtype=float)
        return out[0] if single else out

    def inner(self, p, u, v) -> float:
        return float(np.asarray(u) @ self(p) @ np.asarray(v))


def euclidean_metric(dim: int) -> MetricSpec:
    return MetricSpec(lambda p: np.broadcast_to(np.eye(dim), (len(p), dim, dim)).copy(), "euclidean", dim)


def scaled_metric(factor: float, dim: int) -> MetricSpec:
    return MetricSpec(
        lambda p: factor * np.broadcast_to(np.eye(dim), (len(p), dim, dim)).copy(),
        f"scaled({factor!r})",
        dim,
    )


def random_metric(dim: int, rng: np.random.Generator, amplitude=0.5) -> MetricSpec:
    """Smooth SPD metric ``A(p) A(p)^T + I/2`` with ``A`` affine in ``p`` and random entries."""
    a0 = rng.uniform(-amplitude, amplitude, (dim, dim))
    a1 = rng.uniform(-amplitude, amplitude, (dim, dim, dim))

    def g(p):
        a = a0[None] + np.einsum("ni,ijk->njk", p, a1)
        return a @ np.swapaxes(a, 1, 2) + 0.5 * np.eye(dim)[None]

    return MetricSpec(g, f"random[{int(rng.integers(1 << 30))}]", dim)


def _stencil_derivatives(f, p, h, inside=None):
    """Partial derivatives of ``f`` at one point along each axis.

    Central differences where the stencil stays inside, second-order
    one-sided stencils otherwise. Returns an array of shape ``(d,) + f.shape``.
    """
    p = np.asarray(p, dtype=float)
    d = p.shape[0]
    eye = np.eye(d) * h
    rows = []
    modes = []
    for j in range(d):
        plus, minus = p + eye[j], p - eye[j]
        if inside is None or (inside(plus[None])[0] and inside(minus[None])[0]):
            modes.append("c")
            rows += [plus, minus]
        elif inside(plus[None])[0]:
            modes.append("f")
            rows += [p, plus, p + 2 * eye[j]]
        else:
            modes.append("b")
            rows += [p, minus, p - 2 * eye[j]]
    vals = np.asarray(f(np.array(rows)))
    out = []
    k = 0
    for mode in modes:
        if mode == "c":
            out.append((vals[k] - vals[k + 1]) / (2 * h))
            k += 2
        else:
            sign = 1.0 if mode == "f" else -1.0
            out.append(sign * (-3 * vals[k] + 4 * vals[k + 1] - vals[k + 2]) / (2 * h))
            k += 3
    return np.array(out)


def _inside_predicate(model):
    if model is None:
        return None
    return lambda pts: model.in_chart(pts, tol=0.0)


def christoffel_symbols(metric: MetricSpec, p, model=None, h=None) -> np.ndarray:
    """Levi-Civita symbols ``gamma[k, i, j]`` from finite differences of the metric."""
    p = np.asarray(p, dtype=float)
    scale = model.chart_scale if model is not None else 1.0
    h = 1e-5 * scale if h is None else h
    g0 = metric(p)
    if not np.allclose(g0, g0.T, atol=1e-12) or np.linalg.eigvalsh(g0)[0] <= 0:
        raise DomainError(f"metric is not symmetric positive definite at {p}")
    dg = _stencil_derivatives(metric.g, p, h, _inside_predicate(model))  # dg[l, i, j] = d_l g_ij
    ginv = np.linalg.inv(g0)
    lower = 0.5 * (
        np.einsum("ilj->lij", dg) + np.einsum("jli->lij", dg) - np.einsum("lij->lij", dg)
    )  # lower[l, i, j] = 1/2 (d_i g_lj + d_j g_li - d_l g_ij)
    return np.einsum("kl,lij->kij", ginv, lower)


@dataclass(frozen=True)
class Connection:
    """Affine connection: Levi-Civita of ``metric`` plus an optional Christoffel offset.

    ``offset`` is a constant array ``[k, i, j]`` or a callable of the point.
    """

    metric: MetricSpec
    offset: Optional[object] = None
    tag: str = field(default="levi-civita")

    def christoffel(self, p, model=None, h=None):
        gamma = christoffel_symbols(self.metric, p, model, h)
        if self.offset is None:
            return gamma
        off = self.offset(p) if callable(self.offset) else np.asarray(self.offset)
        return gamma + off


def random_connection(metric: MetricSpec, rng: np.random.Generator, amplitude=0.5) -> Connection:
    d = metric.dim
    off = rng.uniform(-amplitude, amplitude, (d, d, d))
    off = 0.5 * (off + np.swapaxes(off, 1, 2))
    return Connection(metric, off, tag=f"perturbed[{metric.tag}]")


def outward_normal(model: ManifoldModel, metric: MetricSpec, b) -> np.ndarray:
    """Unit outward normal at a boundary point in the metric ``metric``."""
    b = np.asarray(b, dtype=float).reshape(-1)
    if classify_point(model, b) is not PointClass.BOUNDARY:
        raise PreconditionError(f"{b} is not a boundary point of {model!r}")
    grad = model.rho_grad(b)
    ginv = np.linalg.inv(metric(b))
    up = ginv @ grad
    return -up / np.sqrt(grad @ up)


def covariant_derivative(metric: MetricSpec, v, z, p, model=None, connection=None, h=None) -> np.ndarray:
    """``nabla_V Z (p) = V^j d_j Z^k + V^i Z^j Gamma^k_ij``.

    ``z`` is a callable on point batches (a :class:`bflow.fields.VectorField`
    or any vectorized function). ``connection`` defaults to Levi-Civita of
    ``metric``. Derivatives are one-sided where the stencil would leave
    ``model``'s chart domain.
    """
    p = np.asarray(p, dtype=float).reshape(-1)
    v = np.asarray(v, dtype=float).reshape(-1)
    scale = model.chart_scale if model is not None else 1.0
    h = 1e-5 * scale if h is None else h
    conn = connection or Connection(metric)
    dz = _stencil_derivatives(lambda q: np.asarray(z(q)), p, h, _inside_predicate(model))  # dz[j, k]
    gamma = conn.christoffel(p, model, h)
    zp = np.asarray(z(p[None]))[0]
    return v @ dz + np.einsum("i,j,kij->k", v, zp, gamma)
