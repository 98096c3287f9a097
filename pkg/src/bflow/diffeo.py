"""Grid-sampled diffeomorphisms and sampled paths of them."""
from __future__ import annotations

import json
from typing import Optional

import numpy as np

from bflow.errors import ConvergenceError, DomainError, PreconditionError
from bflow.geometry import ManifoldModel, model_from_json
from bflow.interp import Grid, GridSpline

NEWTON_TOL = 1e-10
NEWTON_MAXITER = 50
LOOSE_MARGIN = 0.25


def fd_weights(x0: float, xs, m: int) -> np.ndarray:
    """Finite-difference weights for the ``m``-th derivative at ``x0`` on nodes ``xs`` (Fornberg)."""
    xs = np.asarray(xs, dtype=float)
    n = len(xs)
    c = np.zeros((n, m + 1))
    c1, c4 = 1.0, xs[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2, c5, c4 = 1.0, c4, xs[i] - x0
        for j in range(i):
            c3 = xs[i] - xs[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, m]


class DiscreteDiffeomorphism:
    """A map sampled at the nodes of a grid and interpolated in between.

    ``values`` holds the images of the grid nodes (shape ``grid.shape + (dim,)``)
    and is the primary data; the interpolant acts on the displacement
    ``values - nodes``, which is what keeps periodic axes and lifted circle
    maps consistent.
    """

    def __init__(
        self,
        grid: Grid,
        values,
        model: Optional[ManifoldModel] = None,
        order: str = "cubic",
        boundary_preserving: bool = False,
    ):
        values = np.array(values, dtype=float)
        if values.shape[:-1] != grid.shape or values.shape[-1] != grid.dim:
            raise ValueError(f"values of shape {values.shape} do not fit grid {grid.shape} x {grid.dim}")
        if not np.all(np.isfinite(values)):
            raise DomainError("non-finite diffeomorphism values")
        values.setflags(write=False)
        self.grid = grid
        self.values = values
        self.model = model
        self.order = order
        self.boundary_preserving = boundary_preserving
        self._spline = None

    @classmethod
    def identity(cls, grid: Grid, model=None) -> "DiscreteDiffeomorphism":
        return cls(grid, grid.nodes, model, boundary_preserving=True)

    @classmethod
    def from_function(cls, grid: Grid, fn, model=None, boundary_preserving=False, order="cubic"):
        pts = grid.nodes.reshape(-1, grid.dim)
        vals = np.asarray(fn(pts), dtype=float).reshape(grid.shape + (grid.dim,))
        return cls(grid, vals, model, order, boundary_preserving)

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def displacement(self) -> np.ndarray:
        return self.values - self.grid.nodes

    @property
    def spline(self) -> GridSpline:
        if self._spline is None:
            self._spline = GridSpline(self.grid, self.displacement, self.order)
        return self._spline

    def __call__(self, points):
        p = np.asarray(points, dtype=float)
        single = p.ndim == 1
        q = np.atleast_2d(p)
        out = q + self.spline.at_points(q)
        return out[0] if single else out

    def sup_distance(self, other=None) -> float:
        """Sup-norm distance of node values to ``other`` (identity when omitted)."""
        ref = self.grid.nodes if other is None else other.values
        return float(np.max(np.abs(self.values - ref)))

    # group operations

    def compose(self, inner: "DiscreteDiffeomorphism") -> "DiscreteDiffeomorphism":
        """``self o inner`` sampled on the grid of ``inner``."""
        vals = self(inner.values.reshape(-1, inner.dim)).reshape(inner.values.shape)
        return DiscreteDiffeomorphism(
            inner.grid,
            vals,
            inner.model or self.model,
            inner.order,
            self.boundary_preserving and inner.boundary_preserving,
        )

    def jacobian(self, points, h: Optional[float] = None) -> np.ndarray:
        """Jacobians ``(N, d, d)`` by central differences on the interpolant.

        Near non-periodic grid edges the stencil turns one-sided (second order).
        """
        q = np.atleast_2d(np.asarray(points, dtype=float))
        n, d = q.shape
        h = 1e-5 * self.grid.scale if h is None else h
        jac = np.empty((n, d, d))
        f0 = None
        for j in range(d):
            e = np.zeros(d)
            e[j] = h
            plus, minus = q + e, q - e
            ok_p = self.grid.contains(plus, self.grid.margin)
            ok_m = self.grid.contains(minus, self.grid.margin)
            col = np.empty((n, d))
            central = ok_p & ok_m
            if central.any():
                col[central] = (self(plus[central]) - self(minus[central])) / (2 * h)
            fwd = ~central & ok_p
            bwd = ~central & ~ok_p
            for mask, sgn in ((fwd, 1.0), (bwd, -1.0)):
                if mask.any():
                    if f0 is None:
                        f0 = self(q)
                    p1 = self(q[mask] + sgn * e)
                    p2 = self(q[mask] + 2 * sgn * e)
                    col[mask] = sgn * (-3 * f0[mask] + 4 * p1 - p2) / (2 * h)
            jac[:, :, j] = col
        return jac

    def extrapolating(self, margin: float = LOOSE_MARGIN) -> "DiscreteDiffeomorphism":
        """Same interpolant, allowed to extrapolate ``margin`` (fraction of extent) past the grid."""
        loose = DiscreteDiffeomorphism.__new__(DiscreteDiffeomorphism)
        loose.__dict__.update(self.__dict__)
        loose.grid = Grid(self.grid.kind, self.grid.axes, max(self.grid.margin, margin))
        loose._spline = GridSpline(loose.grid, self.displacement, self.order, coef=self.spline.coef)
        return loose

    def inverse_points(self, targets, x0=None) -> np.ndarray:
        """Solve ``self(q) = target`` row-wise by Newton iteration (bisection fallback in 1D)."""
        y = np.atleast_2d(np.asarray(targets, dtype=float))
        f = self.extrapolating()
        if x0 is None:
            inside = f.grid.contains(y, f.grid.margin)
            x0 = y.copy()
            x0[inside] = y[inside] - f.spline.at_points(y[inside])
        q = np.array(x0, dtype=float)
        done = np.zeros(len(y), bool)
        for _ in range(NEWTON_MAXITER):
            idx = np.flatnonzero(~done)
            if not len(idx):
                break
            ok = f.grid.contains(q[idx], f.grid.margin)
            q[idx[~ok]] = y[idx[~ok]]
            res = f(q[idx]) - y[idx]
            conv = np.max(np.abs(res), axis=-1) <= NEWTON_TOL
            done[idx[conv]] = True
            todo = idx[~conv]
            if not len(todo):
                break
            jac = f.jacobian(q[todo])
            try:
                step = np.linalg.solve(jac, res[~conv][..., None])[..., 0]
            except np.linalg.LinAlgError:
                break
            q_new = q[todo] - step
            bad = ~f.grid.contains(q_new, f.grid.margin)
            q_new[bad] = q[todo][bad] - 0.5 * step[bad]
            q[todo] = q_new
        done &= self.grid.contains(q, self.grid.margin)
        if not done.all():
            if self.dim == 1 and self.grid.kind == "box":
                q[~done] = self._bisect(y[~done])
            else:
                worst = np.flatnonzero(~done)[:3]
                raise ConvergenceError(f"Newton inversion did not converge for targets {y[worst].tolist()}")
        return q

    def _bisect(self, y):
        ax = self.grid.axes[0]
        lo = np.full(len(y), ax.lo)
        hi = np.full(len(y), ax.hi)
        flo = self(lo[:, None])[:, 0] - y[:, 0]
        fhi = self(hi[:, None])[:, 0] - y[:, 0]
        at_lo = np.abs(flo) <= NEWTON_TOL
        at_hi = np.abs(fhi) <= NEWTON_TOL
        if np.any((flo * fhi > 0) & ~at_lo & ~at_hi):
            raise ConvergenceError("target outside the range of the map")
        flo = np.where(at_lo | at_hi, -1.0, flo)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            fm = self(mid[:, None])[:, 0] - y[:, 0]
            left = np.sign(fm) == np.sign(flo)
            lo = np.where(left, mid, lo)
            flo = np.where(left, fm, flo)
            hi = np.where(left, hi, mid)
            if np.max(np.abs(fm)) <= NEWTON_TOL and np.max(hi - lo) < 1e-14:
                break
        out = 0.5 * (lo + hi)
        out = np.where(at_lo, ax.lo, np.where(at_hi, ax.hi, out))
        return out[:, None]

    def invert(self) -> "DiscreteDiffeomorphism":
        nodes = self.grid.nodes.reshape(-1, self.dim)
        det = np.linalg.det(self.jacobian(nodes))
        if np.any(det <= 0):
            raise PreconditionError("map is not orientation preserving at every node")
        q = self.inverse_points(nodes)
        if self.boundary_preserving and self.model is not None and self.model.has_boundary:
            on_b = self.model.on_boundary(nodes)
            if on_b.any():
                q[on_b] = self.model.project_to_boundary(q[on_b])
        return DiscreteDiffeomorphism(
            self.grid, q.reshape(self.values.shape), self.model, self.order, self.boundary_preserving
        )

    def boundary_drift(self) -> float:
        """Largest distance from the boundary among images of boundary nodes."""
        if self.model is None or not self.model.has_boundary:
            return 0.0
        nodes = self.grid.nodes.reshape(-1, self.dim)
        on_b = self.model.on_boundary(nodes)
        if not on_b.any():
            return 0.0
        img = self.values.reshape(-1, self.dim)[on_b]
        return float(np.max(np.linalg.norm(img - self.model.project_to_boundary(img), axis=-1)))

    # serialization

    def to_json(self) -> dict:
        return {
            "model": self.model.to_json() if self.model is not None else None,
            "grid": self.grid.to_json(),
            "grid_shape": list(self.grid.shape),
            "interpolation": self.order,
            "periodic": [ax.periodic for ax in self.grid.axes],
            "boundary_preserving": self.boundary_preserving,
            "values": self.values.reshape(-1).tolist(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def from_json(cls, obj) -> "DiscreteDiffeomorphism":
        grid = Grid.from_json(obj["grid"])
        if list(grid.shape) != list(obj["grid_shape"]):
            raise ValueError("grid_shape does not match the grid description")
        values = np.array(obj["values"], dtype=float).reshape(grid.shape + (grid.dim,))
        model = model_from_json(obj["model"]) if obj.get("model") else None
        return cls(grid, values, model, obj.get("interpolation", "cubic"), bool(obj.get("boundary_preserving")))

    @classmethod
    def loads(cls, text: str) -> "DiscreteDiffeomorphism":
        return cls.from_json(json.loads(text))

    def __repr__(self):
        return f"DiscreteDiffeomorphism(grid={self.grid.kind}{self.grid.shape}, model={self.model!r})"


class DiffeoPath:
    """Samples ``c(t_k)`` of a path of diffeomorphisms on a shared grid, ``t_0 = 0 < ... < t_K = 1``."""

    def __init__(self, times, maps):
        times = np.asarray(times, dtype=float)
        if len(times) != len(maps) or len(times) < 2:
            raise ValueError("need matching times and maps, at least two")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must increase")
        self.times = times
        self.maps = list(maps)
        self.grid = maps[0].grid

    @classmethod
    def from_function(cls, grid, fn, n_samples=33, model=None, boundary_preserving=False):
        """Sample ``fn(t, points)`` at uniform times."""
        times = np.linspace(0.0, 1.0, n_samples)
        maps = [
            DiscreteDiffeomorphism.from_function(grid, lambda p, t=t: fn(t, p), model, boundary_preserving)
            for t in times
        ]
        return cls(times, maps)

    @property
    def values(self) -> np.ndarray:
        return np.stack([m.values for m in self.maps])

    def start_error(self) -> float:
        return self.maps[0].sup_distance()

    def __len__(self):
        return len(self.maps)

    def __getitem__(self, k) -> DiscreteDiffeomorphism:
        return self.maps[k]

    @property
    def end(self) -> DiscreteDiffeomorphism:
        return self.maps[-1]

    def time_derivative(self, k: int, stencil: int = 9) -> np.ndarray:
        """Node values of ``d/dt c`` at sample ``k`` from a ``stencil``-point difference."""
        n = len(self.times)
        stencil = min(stencil, n)
        lo = min(max(k - stencil // 2, 0), n - stencil)
        idx = np.arange(lo, lo + stencil)
        w = fd_weights(self.times[k], self.times[idx], 1)
        return np.tensordot(w, self.values[idx], axes=(0, 0))

    def sup_distance_from_identity(self) -> float:
        return max(m.sup_distance() for m in self.maps)
