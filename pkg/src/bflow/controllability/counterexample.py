"""Boundary derivatives of compositions of flows of ``f b d/dx`` on [0, 1].

Every such flow fixes ``x = 0``, and its derivative there is
``exp(f(0) b'(0))``. When ``b'(0) = 0`` no composition can reach the
derivative ``exp(pi t)`` of the flow of ``sin(pi x) d/dx``: that gap is the
obstruction the harness measures.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from bflow.errors import PreconditionError
from bflow.expr import Expr
from bflow.fields import VectorField
from bflow.flows import flow_points
from bflow.integrate import FlowSettings

DEFAULT_GENERATOR = "sinh(x^2*(x-1)^2)"
OBSTRUCTION_TOL = 1e-9
CROSS_CHECK_TOL = 1e-5  # same bound as the boundary-derivative law
COMPLEX_STEP = 1e-20
FD_STEP = 1e-4

Scalar = Union[str, Callable]


def _compile(fn: Scalar) -> tuple:
    if isinstance(fn, str):
        return Expr(fn, ("x",)), fn
    return fn, getattr(fn, "__name__", repr(fn))


def boundary_slope(b: Callable) -> float:
    """``b'(0)`` by complex step; falls back to a fourth-order central difference."""
    try:
        with np.errstate(all="ignore"):
            value = np.asarray(b(np.array([1j * COMPLEX_STEP])), dtype=complex)
        slope = float(value.imag.ravel()[0] / COMPLEX_STEP)
        if np.isfinite(slope):
            return slope
    except (TypeError, ValueError):
        pass
    h = 1e-3
    xs = np.array([-2 * h, -h, h, 2 * h])
    v = np.asarray(b(xs), dtype=float)
    return float((v[0] - 8 * v[1] + 8 * v[2] - v[3]) / (12 * h))


def target_derivative(t: float) -> float:
    """Derivative at 0 of the time-``t`` flow of ``sin(pi x) d/dx``."""
    return float(np.exp(np.pi * t))


def check_generator(b: Callable, samples: int = 1001):
    ends = np.asarray(b(np.array([0.0, 1.0])), dtype=float)
    if np.max(np.abs(ends)) > 1e-12:
        raise PreconditionError(f"generator must vanish at both ends (b(0), b(1) = {ends[0]:.3g}, {ends[1]:.3g})")
    inner = np.asarray(b(np.linspace(0.0, 1.0, samples)[1:-1]), dtype=float)
    if np.any(inner == 0) or not np.all(np.isfinite(inner)):
        raise PreconditionError("generator must be nonzero inside (0, 1)")


@dataclass
class RecipeOutcome:
    recipe: list  # coefficient expressions, leftmost factor first
    analytic: float
    numeric: float

    @property
    def cross_check_error(self) -> float:
        """Relative once the derivative exceeds one."""
        return abs(self.analytic - self.numeric) / max(1.0, abs(self.analytic))

    def to_json(self) -> dict:
        return {
            "recipe": self.recipe,
            "analytic_derivative": self.analytic,
            "numeric_derivative": self.numeric,
            "cross_check_error": self.cross_check_error,
        }


@dataclass
class CounterexampleReport:
    generator: str
    b_prime_0: float
    t_target: float
    target_derivative: float
    outcomes: list = field(default_factory=list)

    @property
    def derivatives(self) -> np.ndarray:
        return np.array([o.analytic for o in self.outcomes])

    @property
    def min_gap(self) -> float:
        return float(np.min(np.abs(self.derivatives - self.target_derivative)))

    @property
    def max_deviation_from_one(self) -> float:
        return float(np.max(np.abs(self.derivatives - 1.0)))

    @property
    def max_cross_check_error(self) -> float:
        return max(o.cross_check_error for o in self.outcomes)

    @property
    def obstruction(self) -> bool:
        """True when no recipe moved the boundary derivative off 1."""
        return self.max_deviation_from_one <= OBSTRUCTION_TOL

    def to_json(self) -> dict:
        return {
            "generator": self.generator,
            "b_prime_0": self.b_prime_0,
            "t_target": self.t_target,
            "target_derivative": self.target_derivative,
            "min_gap": self.min_gap,
            "max_deviation_from_one": self.max_deviation_from_one,
            "max_cross_check_error": self.max_cross_check_error,
            "obstruction": self.obstruction,
            "recipes": [o.to_json() for o in self.outcomes],
        }


def composed_flow(b: Callable, coefficients: Sequence[Callable], points, settings: FlowSettings) -> np.ndarray:
    """Apply ``e^{f_1 b} o ... o e^{f_k b}`` to points on the line (rightmost factor first)."""
    x = np.asarray(points, dtype=float).reshape(-1, 1)
    for f in reversed(coefficients):
        vf = VectorField(lambda p, f=f: (np.asarray(f(p[:, 0]), dtype=float) * np.asarray(b(p[:, 0]), dtype=float))[:, None], 1)
        x = flow_points(vf, 1.0, x, settings)
    return x[:, 0]


def counterexample_run(
    b: Scalar = DEFAULT_GENERATOR,
    recipes: Sequence[Sequence[Scalar]] = (),
    t_target: float = 0.1,
    settings: Optional[FlowSettings] = None,
) -> CounterexampleReport:
    settings = settings or FlowSettings(abs_tol=1e-13, rel_tol=1e-13)
    b_fn, b_name = _compile(b)
    check_generator(b_fn)
    slope = boundary_slope(b_fn)
    report = CounterexampleReport(b_name, slope, t_target, target_derivative(t_target))
    if not recipes:
        raise PreconditionError("at least one recipe is required")
    probe = np.array([-FD_STEP, FD_STEP, -FD_STEP / 2, FD_STEP / 2])
    for recipe in recipes:
        compiled = [_compile(f) for f in recipe]
        fns = [fn for fn, _ in compiled]
        exponent = sum(float(np.asarray(fn(np.array([0.0]))).ravel()[0]) for fn in fns) * slope
        ends = composed_flow(b_fn, fns, probe, settings)
        coarse = (ends[1] - ends[0]) / (2 * FD_STEP)
        fine = (ends[3] - ends[2]) / FD_STEP
        numeric = float((4 * fine - coarse) / 3)  # Richardson: fourth order
        report.outcomes.append(RecipeOutcome([name for _, name in compiled], float(np.exp(exponent)), numeric))
    return report


def random_recipes(rng: np.random.Generator, count: int = 100, max_factors: int = 4, amplitude: float = 2.0) -> list:
    """Random recipes of 1 to ``max_factors`` coefficients ``a + c x + d sin(w x)``."""
    recipes = []
    for _ in range(count):
        k = int(rng.integers(1, max_factors + 1))
        recipe = []
        for _ in range(k):
            a, c, d = rng.uniform(-amplitude, amplitude, 3)
            w = rng.uniform(0.5, 4.0)
            recipe.append(f"{a:.6f} + {c:.6f}*x + {d:.6f}*sin({w:.6f}*x)")
        recipes.append(recipe)
    return recipes
