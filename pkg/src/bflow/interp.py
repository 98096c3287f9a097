"""Structured grids and tensor-product cubic spline interpolation on them.

Three grid kinds cover the model catalog:

``box``
    Cartesian grid; parameters are the point coordinates themselves.
``polar``
    Disk or annulus in the plane; parameters are ``(theta, R)`` with a
    periodic angle, points are Cartesian.
``circle``
    One periodic axis; points are lifted angles (real numbers), so a circle
    map is stored as a lift ``theta -> theta + u(theta)``.

Non-periodic axes use not-a-knot cubic splines, periodic axes use periodic
cubic splines. Both are stored as uniform B-spline coefficients so that the
evaluation kernel (compiled or numpy, see :mod:`bflow.kernels`) is a local
4-point stencil per axis.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from bflow import kernels
from bflow.errors import DomainError


@dataclass(frozen=True)
class Axis:
    lo: float
    hi: float
    n: int
    periodic: bool = False

    @property
    def spacing(self) -> float:
        if self.periodic:
            return (self.hi - self.lo) / self.n
        return (self.hi - self.lo) / (self.n - 1)

    @property
    def nodes(self) -> np.ndarray:
        if self.periodic:
            return self.lo + self.spacing * np.arange(self.n)
        return np.linspace(self.lo, self.hi, self.n)

    @property
    def extent(self) -> float:
        return self.hi - self.lo


@dataclass(frozen=True)
class Grid:
    kind: str
    axes: tuple
    # extrapolation allowance beyond non-periodic axis ends, as a fraction of extent
    margin: float = 1e-6

    def __post_init__(self):
        if self.kind not in ("box", "polar", "circle"):
            raise ValueError(f"unknown grid kind {self.kind!r}")
        if len(self.axes) not in (1, 2):
            raise ValueError("grids of dimension 1 or 2 only")
        for ax in self.axes:
            if not ax.periodic and ax.n < 5:
                raise ValueError("non-periodic axes need at least 5 nodes")

    @classmethod
    def box(cls, lo, hi, shape, margin=1e-6):
        lo = np.atleast_1d(lo)
        hi = np.atleast_1d(hi)
        shape = np.atleast_1d(shape)
        axes = tuple(Axis(float(a), float(b), int(n)) for a, b, n in zip(lo, hi, shape))
        return cls("box", axes, margin)

    @classmethod
    def polar(cls, n_theta=128, n_r=128, r_lo=0.0, r_hi=1.0):
        return cls("polar", (Axis(0.0, 2 * np.pi, n_theta, True), Axis(r_lo, r_hi, n_r)))

    @classmethod
    def circle(cls, n=512, period=2 * np.pi):
        return cls("circle", (Axis(0.0, period, n, True),))

    @property
    def shape(self) -> tuple:
        return tuple(ax.n for ax in self.axes)

    @property
    def dim(self) -> int:
        return 2 if self.kind == "polar" else len(self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def scale(self) -> float:
        if self.kind == "polar":
            return self.axes[1].hi
        return max(ax.extent for ax in self.axes)

    @property
    def params(self) -> np.ndarray:
        """Node parameters, shape ``shape + (len(axes),)``."""
        mesh = np.meshgrid(*[ax.nodes for ax in self.axes], indexing="ij")
        return np.stack(mesh, axis=-1)

    @property
    def nodes(self) -> np.ndarray:
        """Node points in chart coordinates, shape ``shape + (dim,)``."""
        return self.from_param(self.params)

    def from_param(self, params):
        params = np.asarray(params, dtype=float)
        if self.kind == "polar":
            th, r = params[..., 0], params[..., 1]
            return np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)
        return params.copy()

    def to_param(self, points):
        points = np.asarray(points, dtype=float)
        if self.kind == "polar":
            th = np.mod(np.arctan2(points[..., 1], points[..., 0]), 2 * np.pi)
            r = np.hypot(points[..., 0], points[..., 1])
            return np.stack([th, r], axis=-1)
        return points.copy()

    def to_index(self, params):
        """Map parameters to fractional node indices, with a range check."""
        params = np.asarray(params, dtype=float)
        out = np.empty_like(params)
        for k, ax in enumerate(self.axes):
            u = (params[..., k] - ax.lo) / ax.spacing
            if not ax.periodic:
                slack = self.margin * (ax.n - 1)
                if np.any(u < -slack) or np.any(u > ax.n - 1 + slack) or not np.all(np.isfinite(u)):
                    bad = params[..., k][(u < -slack) | (u > ax.n - 1 + slack) | ~np.isfinite(u)]
                    raise DomainError(
                        f"parameter outside grid axis {k} range [{ax.lo}, {ax.hi}]: {bad.ravel()[:3]}"
                    )
            out[..., k] = u
        return out

    def contains(self, points, slack=0.0):
        """Row mask of points whose parameters lie in the non-periodic axis ranges."""
        params = np.asarray(self.to_param(points), dtype=float)
        ok = np.all(np.isfinite(params), axis=-1)
        for k, ax in enumerate(self.axes):
            if not ax.periodic:
                pad = slack * ax.extent
                ok &= (params[..., k] >= ax.lo - pad) & (params[..., k] <= ax.hi + pad)
        return ok

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "axes": [[ax.lo, ax.hi, ax.n, ax.periodic] for ax in self.axes],
            "margin": self.margin,
        }

    @classmethod
    def from_json(cls, obj) -> "Grid":
        axes = tuple(Axis(float(lo), float(hi), int(n), bool(p)) for lo, hi, n, p in obj["axes"])
        return cls(obj["kind"], axes, float(obj.get("margin", 1e-6)))


@lru_cache(maxsize=32)
def _prefilter_matrix(n: int, periodic: bool) -> np.ndarray:
    """Matrix taking ``n`` samples to B-spline coefficients (``n`` or ``n + 2`` rows)."""
    if periodic:
        a = np.zeros((n, n))
        for j in range(n):
            a[j, (j - 1) % n] += 1 / 6
            a[j, j] += 4 / 6
            a[j, (j + 1) % n] += 1 / 6
        return np.linalg.inv(a)
    a = np.zeros((n + 2, n + 2))
    for j in range(n):
        a[j, j : j + 3] = (1 / 6, 4 / 6, 1 / 6)
    # not-a-knot: third derivative continuous across the second and second-to-last knots
    a[n, 0:5] = (-1, 4, -6, 4, -1)
    a[n + 1, n - 3 : n + 2] = (-1, 4, -6, 4, -1)
    return np.linalg.inv(a)[:, :n]


def spline_coefficients(data, axes) -> np.ndarray:
    coef = np.asarray(data, dtype=float)
    for k, ax in enumerate(axes):
        p = _prefilter_matrix(ax.n, ax.periodic)
        coef = np.moveaxis(np.tensordot(p, coef, axes=([1], [k])), 0, k)
    return np.ascontiguousarray(coef)


class GridSpline:
    """Interpolant of vector-valued samples on a :class:`Grid`.

    ``data`` has shape ``grid.shape + (ncomp,)``. Calls take parameter
    coordinates; :meth:`at_points` takes chart points.
    """

    def __init__(self, grid: Grid, data, order: str = "cubic", coef=None):
        self.grid = grid
        data = np.asarray(data, dtype=float)
        if data.shape[:-1] != grid.shape:
            raise ValueError(f"data shape {data.shape} does not match grid {grid.shape}")
        self.ncomp = data.shape[-1]
        self.order = order
        if order == "cubic":
            self.coef = spline_coefficients(data, grid.axes) if coef is None else coef
        elif order == "linear":
            self.coef = np.ascontiguousarray(data)
        else:
            raise ValueError(f"unknown interpolation order {order!r}")

    def __call__(self, params, deriv=None):
        params = np.asarray(params, dtype=float)
        lead = params.shape[:-1]
        idx = self.grid.to_index(params.reshape(-1, params.shape[-1]))
        deriv = deriv or (0,) * len(self.grid.axes)
        if self.order == "linear":
            out = self._linear(idx, deriv)
        elif len(self.grid.axes) == 1:
            ax = self.grid.axes[0]
            out = kernels.eval_1d(self.coef, np.ascontiguousarray(idx[:, 0]), ax.n, ax.periodic, deriv[0])
            out = np.asarray(out) / ax.spacing ** deriv[0]
        else:
            a, b = self.grid.axes
            out = kernels.eval_2d(
                self.coef,
                np.ascontiguousarray(idx[:, 0]),
                np.ascontiguousarray(idx[:, 1]),
                a.n,
                b.n,
                a.periodic,
                b.periodic,
                deriv[0],
                deriv[1],
            )
            out = np.asarray(out) / (a.spacing ** deriv[0] * b.spacing ** deriv[1])
        return out.reshape(lead + (self.ncomp,))

    def at_points(self, points, deriv=None):
        return self(self.grid.to_param(points), deriv)

    def _linear(self, idx, deriv):
        if any(deriv):
            raise ValueError("linear interpolation does not provide derivatives")
        corners = []
        for k, ax in enumerate(self.grid.axes):
            u = idx[:, k]
            i = np.floor(u).astype(np.intp)
            if ax.periodic:
                t = u - i
                corners.append((np.mod(i, ax.n), np.mod(i + 1, ax.n), t))
            else:
                i = np.clip(i, 0, ax.n - 2)
                corners.append((i, i + 1, u - i))
        if len(corners) == 1:
            i0, i1, t = corners[0]
            return (1 - t)[:, None] * self.coef[i0] + t[:, None] * self.coef[i1]
        (a0, a1, s), (b0, b1, t) = corners
        c = self.coef
        return (
            ((1 - s) * (1 - t))[:, None] * c[a0, b0]
            + ((1 - s) * t)[:, None] * c[a0, b1]
            + (s * (1 - t))[:, None] * c[a1, b0]
            + (s * t)[:, None] * c[a1, b1]
        )
