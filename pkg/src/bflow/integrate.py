"""Adaptive Dormand-Prince 5(4) integration of batched ODEs.

All trajectories in a batch share one step-size sequence, chosen from the
worst error estimate in the batch. This keeps results deterministic and makes
grid-wide flows a handful of large numpy operations per step.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from bflow.errors import FlowError

# Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


@dataclass(frozen=True)
class FlowSettings:
    abs_tol: float = 1e-12
    rel_tol: float = 1e-12
    max_step: float = 0.05
    order: int = 5
    max_steps: int = 200_000
    # projection displacement allowed on top of 10x the error estimate
    projection_floor: float = 1e-13

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_step <= 0:
            raise ValueError("max_step must be positive")
        if self.order < 4:
            raise ValueError("integrator order must be at least 4")

    def to_json(self):
        return {
            "abs_tol": self.abs_tol,
            "rel_tol": self.rel_tol,
            "max_step": self.max_step,
            "order": self.order,
        }


DEFAULT_SETTINGS = FlowSettings()


def integrate(
    rhs: Callable,
    y0,
    t0: float,
    t1: float,
    settings: FlowSettings = DEFAULT_SETTINGS,
    project: Optional[Callable] = None,
    inside: Optional[Callable] = None,
    h0: Optional[float] = None,
):
    """Integrate ``y' = rhs(t, y)`` for a batch ``y0`` of shape ``(N, d)`` from ``t0`` to ``t1``.

    ``project(y)`` returns ``(projected, mask)`` after every accepted step;
    the displacement at masked rows must stay within ten times the local
    error estimate (plus a rounding floor) or :class:`FlowError` is raised.
    ``inside(y)`` is a per-row domain predicate checked after each step.

    Returns ``(y1, last_step)``.
    """
    y = np.array(y0, dtype=float)
    if y.size == 0 or t1 == t0:
        return y, h0
    direction = np.sign(t1 - t0)
    span = abs(t1 - t0)
    h = min(settings.max_step, span) if h0 is None else min(abs(h0), settings.max_step, span)
    if h0 is None:
        f0 = rhs(t0, y)
        scale = settings.abs_tol + settings.rel_tol * np.abs(y)
        d1 = np.max(np.abs(f0) / scale)
        if d1 > 0:
            h = min(h, 0.01 * (1.0 / d1) ** (1 / 5) * 10)
    t = t0
    k_first = None
    steps = 0
    while (t1 - t) * direction > 1e-15 * max(1.0, abs(t1)):
        steps += 1
        if steps > settings.max_steps:
            raise FlowError("step budget exhausted")
        h = min(h, abs(t1 - t))
        hs = direction * h
        k = [rhs(t, y) if k_first is None else k_first]
        for i in range(1, 7):
            yi = y + hs * sum(a * kk for a, kk in zip(_A[i], k))
            k.append(rhs(t + _C[i] * hs, yi))
        y_new = y + hs * sum(b * kk for b, kk in zip(_B5, k) if b)
        err_vec = hs * sum(e * kk for e, kk in zip(_E, k) if e)
        scale = settings.abs_tol + settings.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.max(np.abs(err_vec) / scale)) if y.size else 0.0
        if not np.isfinite(err):
            raise FlowError("non-finite values during integration")
        if err <= 1.0:
            t = t + hs
            if project is not None:
                projected, mask = project(y_new)
                if np.any(mask):
                    disp = np.linalg.norm(projected[mask] - y_new[mask], axis=-1)
                    bound = 10.0 * np.linalg.norm(err_vec[mask], axis=-1) + settings.projection_floor
                    if np.any(disp > bound):
                        raise FlowError(
                            f"boundary projection moved a point by {disp.max():.3e} "
                            f"(bound {bound[np.argmax(disp - bound)]:.3e}); field not tangent or tolerance too loose"
                        )
                    y_new = projected
            if inside is not None:
                ok = inside(y_new)
                if not np.all(ok):
                    raise FlowError(f"trajectory left the chart domain near {y_new[~ok][0]}")
            y = y_new
            k_first = rhs(t, y) if project is not None else k[6]
            fac = 0.9 * (1.0 / max(err, 1e-10)) ** (1 / 5)
            h = min(settings.max_step, h * min(5.0, max(0.2, fac)))
        else:
            fac = 0.9 * (1.0 / err) ** (1 / 5)
            h = h * max(0.1, fac)
            k_first = k[0]
            if h < 1e-14 * max(1.0, abs(t)):
                raise FlowError("step size underflow")
    return y, h
