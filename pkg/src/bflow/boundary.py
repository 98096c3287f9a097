"""Extension of boundary fields through the collar and a local section of restriction.

Everything here runs on the closed unit disk with its polar collar
``(theta, r) -> (1 - r)(cos theta, sin theta)``. A boundary diffeomorphism is
stored through its displacement ``u``: ``psi(theta) = theta + u(theta)``.

Pipeline for the section ``k``: the straight path ``f_t = id + t u`` has
right logarithmic derivative ``a_t = u o f_t^{-1}`` (an angular speed); each
time slice is extended into the disk as ``chi(p) a_t(theta(p)) (-y, x)`` and
the resulting time-dependent field is evolved to time one.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from bflow.diffeo import DiffeoPath, DiscreteDiffeomorphism
from bflow.errors import PreconditionError
from bflow.fields import CutoffChi, VectorField, build_chi
from bflow.flows import TimeDependentVectorField, evolve, right_log_derivative_field
from bflow.geometry import DiskD2, Interval01, ManifoldModel
from bflow.integrate import DEFAULT_SETTINGS, FlowSettings
from bflow.interp import Grid, GridSpline

OMEGA_RADIUS = 0.5
TWO_PI = 2 * np.pi


class BoundaryDiffeo:
    """Orientation-preserving circle diffeomorphism ``theta -> theta + u(theta)``."""

    def __init__(self, u, check: bool = True):
        u = np.array(u, dtype=float).reshape(-1)
        u.setflags(write=False)
        self.u = u
        self.grid = Grid.circle(len(u), TWO_PI)
        self._spline = GridSpline(self.grid, u[:, None])
        if check and np.any(1.0 + self.du(self.grid.nodes[:, 0]) <= 0):
            raise PreconditionError("boundary map is not an orientation-preserving diffeomorphism")

    @classmethod
    def from_function(cls, fn, grid_size: int = 256) -> "BoundaryDiffeo":
        """From a lift ``theta -> psi(theta)`` of the map."""
        th = TWO_PI * np.arange(grid_size) / grid_size
        return cls(np.asarray(fn(th), dtype=float) - th)

    @classmethod
    def identity(cls, grid_size: int = 256) -> "BoundaryDiffeo":
        return cls(np.zeros(grid_size))

    @classmethod
    def rotation(cls, alpha: float, grid_size: int = 256) -> "BoundaryDiffeo":
        return cls(np.full(grid_size, float(alpha)))

    @property
    def grid_size(self) -> int:
        return len(self.u)

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes[:, 0]

    def disp(self, theta) -> np.ndarray:
        th = np.asarray(theta, dtype=float)
        return self._spline(th.reshape(-1, 1))[:, 0].reshape(th.shape)

    def du(self, theta) -> np.ndarray:
        th = np.asarray(theta, dtype=float)
        return self._spline(th.reshape(-1, 1), deriv=(1,))[:, 0].reshape(th.shape)

    def __call__(self, theta) -> np.ndarray:
        th = np.asarray(theta, dtype=float)
        return th + self.disp(th)

    def c1_norm(self, oversample: int = 4) -> float:
        th = TWO_PI * np.arange(oversample * self.grid_size) / (oversample * self.grid_size)
        return float(np.max(np.abs(self.disp(th))) + np.max(np.abs(self.du(th))))

    def in_omega(self, radius: float = OMEGA_RADIUS) -> bool:
        return self.c1_norm() <= radius

    def compose(self, inner: "BoundaryDiffeo") -> "BoundaryDiffeo":
        """``self o inner`` on the grid of ``inner``."""
        th = inner.nodes
        return BoundaryDiffeo(inner.u + self.disp(th + inner.u))

    def inverse_lift(self, theta, t: float = 1.0) -> np.ndarray:
        """Solve ``s + t u(s) = theta`` for ``s`` by Newton iteration."""
        theta = np.asarray(theta, dtype=float)
        s = theta - t * self.disp(theta)
        for _ in range(50):
            res = s + t * self.disp(s) - theta
            if np.max(np.abs(res), initial=0.0) <= 1e-14:
                break
            s = s - res / (1.0 + t * self.du(s))
        return s

    def invert(self) -> "BoundaryDiffeo":
        th = self.nodes
        return BoundaryDiffeo(self.inverse_lift(th) - th)

    def sup_distance(self, other: "BoundaryDiffeo") -> float:
        """Sup distance at the nodes of ``self``."""
        return float(np.max(np.abs(self.u - other.disp(self.nodes))))

    def to_json(self) -> dict:
        return {"grid_size": self.grid_size, "u": self.u.tolist()}

    @classmethod
    def from_json(cls, obj) -> "BoundaryDiffeo":
        u = np.asarray(obj["u"], dtype=float)
        if len(u) != int(obj["grid_size"]):
            raise ValueError("grid_size does not match the number of samples")
        return cls(u)

    def __repr__(self):
        return f"BoundaryDiffeo(grid_size={self.grid_size}, c1={self.c1_norm():.3g})"


@dataclass(frozen=True)
class ExtensionOperator:
    model: ManifoldModel
    chi: CutoffChi

    @classmethod
    def for_model(cls, model: ManifoldModel) -> "ExtensionOperator":
        return cls(model, build_chi(model.collar))


def _angle(points):
    return np.mod(np.arctan2(points[:, 1], points[:, 0]), TWO_PI)


def _collar_support(collar):
    return lambda p: np.hypot(p[:, 0], p[:, 1]) > 1.0 - collar.s_prime


def extend_theta(op: ExtensionOperator, xb) -> VectorField:
    """Extend a boundary field into the model through the collar, cut off by ``chi``.

    On the disk ``xb`` is an angular speed: a callable of angles or a
    one-dimensional :class:`VectorField` on the circle. On the interval the
    boundary has no nonzero tangent fields and the extension is zero.
    """
    if isinstance(op.model, Interval01):
        return VectorField.zero(1)
    if not isinstance(op.model, DiskD2):
        raise PreconditionError("collar extension is implemented for the disk and the interval")
    speed = _as_speed(xb)
    chi = op.chi

    def fn(p):
        w = chi(p) * speed(_angle(p))
        return w[:, None] * np.stack([-p[:, 1], p[:, 0]], axis=-1)

    return VectorField(fn, 2, tangent=True, support=_collar_support(op.model.collar), name="ext")


def _as_speed(xb):
    if isinstance(xb, VectorField):
        return lambda th: xb(np.asarray(th)[:, None])[:, 0]
    if np.isscalar(xb):
        c = float(xb)
        return lambda th: np.full(np.shape(th), c)
    return xb


def _rotation_field(speed_t, cutoff=None, support=None) -> TimeDependentVectorField:
    """``X(t, p) = cutoff(p) a_t(theta(p)) (-y, x)``."""

    def fn(t, p):
        w = speed_t(t, _angle(p))
        if cutoff is not None:
            w = w * cutoff(p)
        return w[:, None] * np.stack([-p[:, 1], p[:, 0]], axis=-1)

    return TimeDependentVectorField(fn, 2, tangent=True, support=support, name="angular")


def boundary_log_derivative(psi: BoundaryDiffeo):
    """``a_t(theta) = u(f_t^{-1}(theta))`` for the straight path ``f_t = id + t u``."""
    return lambda t, th: psi.disp(psi.inverse_lift(th, t))


def straight_path(psi: BoundaryDiffeo, n_samples: int = 33) -> DiffeoPath:
    """``f_t(theta) = theta + t u(theta)`` sampled on the circle grid of ``psi``."""
    grid = psi.grid
    return DiffeoPath.from_function(
        grid, lambda t, p: p + t * psi.u[:, None], n_samples, boundary_preserving=True
    )


def boundary_log_derivative_by_path(psi: BoundaryDiffeo, n_samples: int = 33):
    """Same field as :func:`boundary_log_derivative`, by differencing and inverting the sampled path."""
    xt = right_log_derivative_field(straight_path(psi, n_samples))
    return lambda t, th: xt(t, np.asarray(th).reshape(-1, 1))[:, 0]


def default_disk_grid() -> Grid:
    return Grid.polar(128, 128, 0.0, 1.0)


def _check_omega(psi: BoundaryDiffeo, radius=OMEGA_RADIUS):
    norm = psi.c1_norm()
    if norm > radius:
        raise PreconditionError(f"boundary map outside the section domain: C1 norm {norm:.4g} > {radius}")


def section_k(
    psi: BoundaryDiffeo,
    settings: FlowSettings = DEFAULT_SETTINGS,
    model: Optional[DiskD2] = None,
    grid: Optional[Grid] = None,
    method: str = "analytic",
) -> DiscreteDiffeomorphism:
    """The local section ``k(psi)``: a disk diffeomorphism restricting to ``psi`` on the boundary."""
    _check_omega(psi)
    model = model or DiskD2()
    grid = grid or default_disk_grid()
    if np.all(psi.u == 0):
        return DiscreteDiffeomorphism.identity(grid, model)
    speed = boundary_log_derivative(psi) if method == "analytic" else boundary_log_derivative_by_path(psi)
    chi = build_chi(model.collar)
    xt = _rotation_field(speed, chi, _collar_support(model.collar))
    return evolve(xt, settings, model, grid).end


def annulus_grid(model: DiskD2, n_theta=128, n_r=33) -> Grid:
    return Grid.polar(n_theta, n_r, 1.0 - model.collar.s, 1.0)


def theta_s_morphism(
    psi: BoundaryDiffeo,
    settings: FlowSettings = DEFAULT_SETTINGS,
    model: Optional[DiskD2] = None,
    grid: Optional[Grid] = None,
) -> DiscreteDiffeomorphism:
    """Evolution of the uncut collar-product field on ``N_s``; equals ``(psi, id)`` in collar coordinates."""
    _check_omega(psi)
    model = model or DiskD2()
    grid = grid or annulus_grid(model)
    xt = _rotation_field(boundary_log_derivative(psi))
    return evolve(xt, settings, model, grid).end


def twist_map(alpha: float, model: Optional[DiskD2] = None, grid: Optional[Grid] = None):
    """Closed form ``(theta, r) -> (theta + alpha chi(r), r)``."""
    model = model or DiskD2()
    grid = grid or default_disk_grid()
    chi = build_chi(model.collar)

    def fn(p):
        a = alpha * chi(p)
        c, s = np.cos(a), np.sin(a)
        return np.stack([c * p[:, 0] - s * p[:, 1], s * p[:, 0] + c * p[:, 1]], axis=-1)

    return DiscreteDiffeomorphism.from_function(grid, fn, model, boundary_preserving=True)


def restrict_R(phi: DiscreteDiffeomorphism) -> BoundaryDiffeo:
    """Boundary restriction of a boundary-preserving disk map, on the angular nodes of its grid."""
    if not phi.boundary_preserving:
        raise PreconditionError("map is not declared boundary preserving")
    if phi.grid.kind != "polar" or abs(phi.grid.axes[1].hi - 1.0) > 1e-15:
        raise PreconditionError("restriction needs a polar grid reaching the unit circle")
    th = phi.grid.axes[0].nodes
    img = phi.values[:, -1, :]
    drift = np.max(np.abs(np.hypot(img[:, 0], img[:, 1]) - 1.0))
    if drift > 1e-9:
        raise PreconditionError(f"boundary nodes leave the boundary by {drift:.3e}")
    lifted = np.unwrap(np.arctan2(img[:, 1], img[:, 0]))
    steps = np.diff(np.append(lifted, lifted[0] + TWO_PI))
    if np.any(steps <= 0):
        raise PreconditionError("boundary restriction reverses orientation")
    u = lifted - th
    u -= TWO_PI * np.round(u[0] / TWO_PI)
    return BoundaryDiffeo(u)


def epsilon_error(
    phi: BoundaryDiffeo,
    psi: BoundaryDiffeo,
    settings: FlowSettings = DEFAULT_SETTINGS,
    model: Optional[DiskD2] = None,
    grid: Optional[Grid] = None,
) -> DiscreteDiffeomorphism:
    """``k(psi)^{-1} o k(phi)^{-1} o k(phi o psi)``."""
    prod = phi.compose(psi)
    for name, m in (("phi", phi), ("psi", psi), ("phi o psi", prod)):
        if m.c1_norm() > OMEGA_RADIUS:
            raise PreconditionError(f"{name} lies outside the section domain")
    k_prod = section_k(prod, settings, model, grid)
    k_phi_inv = section_k(phi, settings, model, grid).invert()
    k_psi_inv = section_k(psi, settings, model, grid).invert()
    return k_psi_inv.compose(k_phi_inv.compose(k_prod))


def collar_depth(grid: Grid) -> np.ndarray:
    """Collar coordinate ``r = 1 - |p|`` at every node, flattened."""
    nodes = grid.nodes.reshape(-1, 2)
    return 1.0 - np.hypot(nodes[:, 0], nodes[:, 1])


def decompose(
    phi: DiscreteDiffeomorphism, settings: FlowSettings = DEFAULT_SETTINGS
) -> tuple:
    """Split ``phi = k(psi) o phi_int`` with ``psi`` its boundary restriction."""
    psi = restrict_R(phi)
    _check_omega(psi)
    k = section_k(psi, settings, phi.model, phi.grid)
    return psi, k.invert().compose(phi)


def section_report(psi: BoundaryDiffeo, settings: FlowSettings = DEFAULT_SETTINGS, source=None) -> dict:
    """Section experiment summary; ``source`` describes how ``psi`` was given."""
    t0 = time.perf_counter()
    model = DiskD2()
    k = section_k(psi, settings, model)
    back = restrict_R(k)
    r = collar_depth(k.grid)
    outside = r >= model.collar.s_prime
    nodes = k.grid.nodes.reshape(-1, 2)
    return {
        "input_psi": source if source is not None else psi.to_json(),
        "sup_restriction_error": back.sup_distance(psi),
        "sup_identity_outside_collar": float(np.max(np.abs(k.values.reshape(-1, 2)[outside] - nodes[outside]))),
        "runtime_ms": (time.perf_counter() - t0) * 1e3,
    }


def random_boundary_diffeo(rng, c1_norm: float, modes: int = 3, grid_size: int = 256) -> BoundaryDiffeo:
    """Random trigonometric displacement of degree ``modes`` rescaled to the given C1 norm."""
    th = TWO_PI * np.arange(grid_size) / grid_size
    k = np.arange(1, modes + 1)[:, None]
    a, b = rng.standard_normal((2, modes, 1)) / k
    u = rng.standard_normal() * 0.3 + np.sum(a * np.cos(k * th) + b * np.sin(k * th), axis=0)
    psi = BoundaryDiffeo(u, check=False)
    return BoundaryDiffeo(u * (c1_norm / psi.c1_norm()))
