"""Heisenberg frames on the unit ball of R^(2n+1) and their trace on the sphere.

Coordinates are ordered ``(x_1..x_n, y_1..y_n, z)``. The frame is
``X_j = d/dx_j - (y_j/2) d/dz`` and ``Y_j = d/dy_j + (x_j/2) d/dz``. At a sphere
point ``p`` a combination ``sum a_j X_j + b_j Y_j`` is tangent to the sphere
exactly when ``a.e1 + b.e2 = 0`` with ``e1 = x - z y/2`` and ``e2 = y + z x/2``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from bflow.errors import DomainError
from bflow.fields import VectorField, fd_jacobian
from bflow.geometry import EuclideanBall

# rank of E' at p
FRAME_RANK_TOL = 1e-8
# the tangency constraint counts as active when |(e1, e2)| exceeds this
CONSTRAINT_TOL = 1e-7
# bracket spans: relative singular value threshold and stencil step
SPAN_TOL = 1e-6
BRACKET_STEP = 1e-3
SPHERE_TOL = 1e-10


@dataclass(frozen=True)
class DistributionSpec:
    n: int
    frame: tuple
    model: EuclideanBall

    @property
    def ambient_dim(self) -> int:
        return 2 * self.n + 1

    @property
    def boundary_dim(self) -> int:
        return 2 * self.n

    def frame_matrix(self, points) -> np.ndarray:
        """``F[N, 2n+1, 2n]``: columns are ``X_1..X_n, Y_1..Y_n``."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        n = self.n
        m = np.zeros((len(p), 2 * n + 1, 2 * n))
        for j in range(n):
            m[:, j, j] = 1.0
            m[:, n + j, n + j] = 1.0
            m[:, 2 * n, j] = -0.5 * p[:, n + j]
            m[:, 2 * n, n + j] = 0.5 * p[:, j]
        return m

    def e1e2(self, p):
        p = np.asarray(p, dtype=float)
        n = self.n
        x, y, z = p[..., :n], p[..., n : 2 * n], p[..., 2 * n : 2 * n + 1]
        return x - 0.5 * z * y, y + 0.5 * z * x

    def missing_direction(self, p) -> Optional[np.ndarray]:
        """``Z' = dz - z / (|e1|^2 + |e2|^2) (e1.X + e2.Y)``; ``None`` at the poles."""
        p = np.asarray(p, dtype=float).reshape(-1)
        e1, e2 = self.e1e2(p)
        w = np.concatenate([e1, e2])
        norm2 = float(w @ w)
        if norm2 <= CONSTRAINT_TOL**2:
            return None
        out = np.zeros(self.ambient_dim)
        out[-1] = 1.0
        out -= p[-1] / norm2 * (self.frame_matrix(p)[0] @ w)
        return out


def heisenberg_model(n: int) -> DistributionSpec:
    if n < 1:
        raise ValueError("n must be at least 1")
    d = 2 * n + 1
    frame = []
    for j in range(n):

        def xj(p, j=j):
            out = np.zeros_like(p)
            out[:, j] = 1.0
            out[:, -1] = -0.5 * p[:, n + j]
            return out

        frame.append(VectorField(xj, d, name=f"X{j + 1}"))
    for j in range(n):

        def yj(p, j=j):
            out = np.zeros_like(p)
            out[:, n + j] = 1.0
            out[:, -1] = 0.5 * p[:, j]
            return out

        frame.append(VectorField(yj, d, name=f"Y{j + 1}"))
    return DistributionSpec(n, tuple(frame), EuclideanBall(n))


def _check_sphere(p):
    r = np.linalg.norm(p, axis=-1)
    if np.any(np.abs(r - 1.0) > SPHERE_TOL):
        raise DomainError("point is not on the unit sphere")


def tangent_rank(dist: DistributionSpec, p):
    """Rank of ``E'_p = E_p cap T_p S`` and an orthonormal basis of it (rows)."""
    p = np.asarray(p, dtype=float).reshape(-1)
    _check_sphere(p)
    f = dist.frame_matrix(p)[0]
    w = f.T @ p
    smax = np.linalg.norm(f, 2)
    if np.linalg.norm(w) > CONSTRAINT_TOL * smax:
        _, _, vt = np.linalg.svd(w[None, :])
        null = vt[1:].T
    else:
        null = np.eye(dist.boundary_dim)
    u, s, _ = np.linalg.svd(f @ null, full_matrices=False)
    rank = int(np.sum(s > FRAME_RANK_TOL * s[0]))
    return rank, u[:, :rank].T


def tangent_ranks(dist: DistributionSpec, points) -> np.ndarray:
    """Vectorized :func:`tangent_rank` returning ranks only."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    _check_sphere(p)
    f = dist.frame_matrix(p)
    w = np.einsum("nij,ni->nj", f, p)
    smax = np.linalg.norm(f, 2, axis=(1, 2))
    active = np.linalg.norm(w, axis=-1) > CONSTRAINT_TOL * smax
    ranks = np.full(len(p), dist.boundary_dim)
    if active.any():
        _, _, vt = np.linalg.svd(w[active][:, None, :])
        null = np.swapaxes(vt[:, 1:, :], 1, 2)
        s = np.linalg.svd(f[active] @ null, compute_uv=False)
        ranks[active] = np.sum(s > FRAME_RANK_TOL * s[:, :1], axis=-1)
    return ranks


# --- local sections of E' and their brackets -------------------------------------


def projected_sections(dist: DistributionSpec) -> list:
    """``S_c(q) = F(q)(c - (c.w)w / |w|^2)`` with ``w = F(q)^T q`` for each basis vector ``c``.

    These lie in ``E`` and are tangent to every sphere about the origin.
    """

    def make(k):
        def fn(q):
            f = dist.frame_matrix(q)
            w = np.einsum("nij,ni->nj", f, q)
            w = w / np.linalg.norm(w, axis=-1, keepdims=True)
            c = np.zeros(dist.boundary_dim)
            c[k] = 1.0
            coef = c[None, :] - w[:, k : k + 1] * w
            return np.einsum("nij,nj->ni", f, coef)

        return VectorField(fn, dist.ambient_dim, name=f"S{k}")

    return [make(k) for k in range(dist.boundary_dim)]


def split_sections(dist: DistributionSpec) -> list:
    """``(P_{e1-perp} E_i) . X`` and ``(P_{e2-perp} E_i) . Y`` for ``i = 1..n``.

    Each field uses only ``X`` or only ``Y`` frame vectors.
    """
    n = dist.n

    def make(i, use_x):
        def fn(q):
            e1, e2 = dist.e1e2(q)
            e = e1 if use_x else e2
            norm2 = np.sum(e * e, axis=-1, keepdims=True)
            unit = np.zeros(n)
            unit[i] = 1.0
            coef = unit[None, :] - np.where(norm2 > 0, e[:, i : i + 1] * e / np.where(norm2 > 0, norm2, 1), 0)
            f = dist.frame_matrix(q)
            cols = f[:, :, :n] if use_x else f[:, :, n:]
            return np.einsum("nij,nj->ni", cols, coef)

        return VectorField(fn, dist.ambient_dim, name=f"{'a' if use_x else 'b'}{i}")

    return [make(i, True) for i in range(n)] + [make(i, False) for i in range(n)]


def _span_dim(vectors, p, tol=SPAN_TOL):
    """Dimension of the span of ``vectors`` projected onto ``T_p S``."""
    if not len(vectors):
        return 0
    proj = np.eye(len(p)) - np.outer(p, p)
    m = np.asarray(vectors) @ proj
    s = np.linalg.svd(m, compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


@dataclass
class BracketSpan:
    dims: dict = field(default_factory=dict)
    vectors: dict = field(default_factory=dict)

    def contains(self, v, depth, p) -> bool:
        base = self.vectors[depth]
        return _span_dim(base + [v], p) == _span_dim(base, p)


def bracket_spans(dist: DistributionSpec, p, depth: int = 2, family: str = "projected", h=BRACKET_STEP):
    """Span of ``E'_p`` together with brackets of local sections up to ``depth``, per depth."""
    p = np.asarray(p, dtype=float).reshape(-1)
    _check_sphere(p)
    rank, basis = tangent_rank(dist, p)
    full = dist.boundary_dim
    acc = list(basis)
    out = BracketSpan({1: rank}, {1: list(acc)})
    if depth < 2:
        return out
    if rank == full:
        for d in range(2, depth + 1):
            out.dims[d] = rank
            out.vectors[d] = list(acc)
        return out
    secs = projected_sections(dist) if family == "projected" else split_sections(dist)
    q = p[None, :]
    vals = [s(q)[0] for s in secs]
    jacs = [fd_jacobian(s, q, h, order=4)[0] for s in secs]
    level2 = []
    for i in range(len(secs)):
        for j in range(i + 1, len(secs)):
            level2.append((i, j))
            acc.append(jacs[j] @ vals[i] - jacs[i] @ vals[j])
    out.dims[2] = _span_dim(acc, p)
    out.vectors[2] = list(acc)
    if depth < 3:
        return out
    if out.dims[2] == full:
        out.dims[3] = full
        out.vectors[3] = list(acc)
        return out

    def bracket_fn(i, j):
        def fn(r):
            ji = fd_jacobian(secs[i], r, h, order=4)
            jj = fd_jacobian(secs[j], r, h, order=4)
            return np.einsum("nab,nb->na", jj, secs[i](r)) - np.einsum("nab,nb->na", ji, secs[j](r))

        return fn

    for i, j in level2:
        b = bracket_fn(i, j)
        bval = b(q)[0]
        jb = fd_jacobian(b, q, h, order=4)[0]
        for k in range(len(secs)):
            acc.append(jb @ vals[k] - jacs[k] @ bval)
    out.dims[3] = _span_dim(acc, p)
    out.vectors[3] = list(acc)
    return out


def bracket_generation_check(dist: DistributionSpec, p, depth: int = 2, family: str = "projected") -> int:
    """Dimension of the span of ``E'`` sections and their brackets up to ``depth`` at ``p``."""
    spans = bracket_spans(dist, p, depth, family)
    return spans.dims[max(spans.dims)]


def misses_direction(dist: DistributionSpec, p, depth: int = 2, family: str = "split") -> bool:
    """True when the depth-limited bracket span at ``p`` does not contain ``Z'``."""
    z = dist.missing_direction(p)
    if z is None:
        raise DomainError("missing direction undefined at the poles")
    spans = bracket_spans(dist, p, depth, family)
    return not spans.contains(z, max(spans.dims), np.asarray(p, dtype=float))


# --- rank maps ----------------------------------------------------------------------


def sphere_samples(n_ambient: int, count: int, rng) -> np.ndarray:
    v = rng.standard_normal((count, n_ambient))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def near_pole_samples(n_ambient: int, count: int, rng, radius=1e-8) -> np.ndarray:
    """Points within ``radius`` of the poles ``(0, .., 0, +-1)``, alternating signs."""
    pole = np.zeros((count, n_ambient))
    pole[:, -1] = np.where(np.arange(count) % 2 == 0, 1.0, -1.0)
    jitter = rng.standard_normal((count, n_ambient))
    jitter[:, -1] = 0
    jitter *= (radius * rng.uniform(0, 1, (count, 1))) / np.maximum(np.linalg.norm(jitter, axis=-1, keepdims=True), 1e-300)
    jitter[0] = 0
    pts = pole + jitter
    return pts / np.linalg.norm(pts, axis=-1, keepdims=True)


@dataclass
class RankMap:
    n: int
    points: np.ndarray
    ranks: np.ndarray
    span_depth2: np.ndarray
    span_depth3: np.ndarray
    pole_mask: np.ndarray

    def expected(self) -> np.ndarray:
        return np.where(self.pole_mask, 2 * self.n, 2 * self.n - 1)

    def exceptions(self) -> int:
        return int(np.sum(self.ranks != self.expected()))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        d = self.points.shape[1]
        names = [f"x{j + 1}" for j in range(self.n)] + [f"y{j + 1}" for j in range(self.n)] + ["z"]
        assert len(names) == d
        writer.writerow(names + ["rank", "bracket_span_depth2", "bracket_span_depth3"])
        for row, r, s2, s3 in zip(self.points, self.ranks, self.span_depth2, self.span_depth3):
            writer.writerow([repr(float(v)) for v in row] + [int(r), _cell(s2), _cell(s3)])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "samples": int(len(self.points)),
            "pole_samples": int(self.pole_mask.sum()),
            "exceptions": self.exceptions(),
            "rank_counts": {str(int(k)): int(v) for k, v in zip(*np.unique(self.ranks, return_counts=True))},
        }


def _cell(v):
    return "" if v < 0 else int(v)


def rank_map(
    n: int, samples: int, rng, pole_samples: int = 0, bracket_samples: int = 0, family: str = "projected"
) -> RankMap:
    """Ranks at uniform sphere samples plus near-pole samples; bracket spans at the first ``bracket_samples``.

    Rows without a computed span hold ``-1`` (empty cells in CSV).
    """
    dist = heisenberg_model(n)
    d = 2 * n + 1
    pts = sphere_samples(d, samples, rng)
    poles = near_pole_samples(d, pole_samples, rng) if pole_samples else np.empty((0, d))
    allp = np.concatenate([pts, poles])
    e1, e2 = dist.e1e2(allp)
    pole_mask = np.linalg.norm(np.concatenate([e1, e2], axis=-1), axis=-1) <= CONSTRAINT_TOL
    ranks = tangent_ranks(dist, allp)
    s2 = np.full(len(allp), -1)
    s3 = np.full(len(allp), -1)
    for k in range(min(bracket_samples, len(allp))):
        spans = bracket_spans(dist, allp[k], 3, family)
        s2[k], s3[k] = spans.dims[2], spans.dims[3]
    return RankMap(n, allp, ranks, s2, s3, pole_mask)
