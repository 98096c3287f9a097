"""The acceptance battery: ten criteria, each a list of checks with stated tolerances.

Every criterion takes a NumPy generator and returns ``(checks, results)``.
:func:`run_criteria` seeds each criterion independently from one seed, so a
single criterion reproduces on its own.
"""
from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from bflow.boundary import (
    BoundaryDiffeo,
    collar_depth,
    default_disk_grid,
    epsilon_error,
    random_boundary_diffeo,
    restrict_R,
    section_k,
    theta_s_morphism,
)
from bflow.catalog import BOUNDARY_TANGENT, PRESETS, field_from_components, preset
from bflow.controllability.condition import PARALLEL_TOL, check_condition_II
from bflow.controllability.counterexample import (
    CROSS_CHECK_TOL,
    DEFAULT_GENERATOR,
    OBSTRUCTION_TOL,
    counterexample_run,
    random_recipes,
)
from bflow.controllability.factorize import (
    factorize_boundary,
    factorize_boundary_fixing,
    factorize_interior,
    random_target,
)
from bflow.controllability.heisenberg import (
    bracket_generation_check,
    heisenberg_model,
    misses_direction,
    rank_map,
    sphere_samples,
)
from bflow.diffeo import DiffeoPath
from bflow.fields import ScalarField, smoothstep
from bflow.flows import flow_jacobian, flow_map, flow_points, split_by_partition
from bflow.geometry import Circle, DiskD2, HalfSpacePatch, euclidean_metric
from bflow.integrate import FlowSettings
from bflow.interp import Grid
from bflow.report import at_least, at_most, equals


@dataclass
class CriterionResult:
    number: int
    title: str
    checks: list = field(default_factory=list)
    results: dict = field(default_factory=dict)
    runtime_ms: float = 0.0
    error: Optional[str] = None

    @property
    def passed(self) -> bool:
        return self.error is None and bool(self.checks) and all(c.passed for c in self.checks)

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        failing = [c.name for c in self.checks if not c.passed]
        detail = f" ({self.error})" if self.error else (f" failing: {', '.join(failing)}" if failing else "")
        return f"criterion {self.number:2d} {status} [{self.runtime_ms / 1e3:6.1f} s] {self.title}{detail}"

    def to_json(self) -> dict:
        return {
            "number": self.number,
            "title": self.title,
            "passed": self.passed,
            "checks": [c.to_json() for c in self.checks],
            "results": self.results,
            "runtime_ms": self.runtime_ms,
            "error": self.error,
        }


# 1 ------------------------------------------------------------------------


def flow_oracle(rng):
    pr = preset("sin_pi")
    model, x = pr.model(), pr.build()
    nodes = model.default_grid().nodes.reshape(-1, 1)
    t0 = time.perf_counter()
    errors = {}
    for t in (0.1, 0.5, 1.0):
        errors[t] = float(np.max(np.abs(flow_points(x, t, nodes, model=model) - pr.exact_flow(t, nodes))))
    elapsed = time.perf_counter() - t0
    checks = [at_most(f"sup_error_t={t}", e, 1e-8) for t, e in errors.items()]
    checks.append(at_most("runtime_ms", elapsed * 1e3, 5_000.0))
    return checks, {"grid_nodes": len(nodes), "sup_errors": {str(t): e for t, e in errors.items()}}


# 2 ------------------------------------------------------------------------


def derivative_oracle(rng):
    pr = preset("sin_pi")
    model, x = pr.model(), pr.build()
    points = np.sort(rng.uniform(0.0, 1.0, 20))[:, None]
    checks, results = [], {"points": points[:, 0]}
    for t in (0.1, 0.5, 1.0):
        exact = pr.exact_derivative(t, points[:, 0])
        jac = flow_jacobian(x, t, points, model=model)[:, 0, 0]
        err = float(np.max(np.abs(jac - exact)))
        checks.append(at_most(f"flow_jacobian_error_t={t}", err, 1e-5))
        # the interpolant Jacobian of the sampled map, reported for comparison
        sampled = flow_map(x, t, model=model).jacobian(points)[:, 0, 0]
        results[f"interpolant_jacobian_error_t={t}"] = float(np.max(np.abs(sampled - exact)))
        results[f"flow_jacobian_error_t={t}"] = err
    return checks, results


# 3 ------------------------------------------------------------------------


def boundary_preservation(rng):
    checks, results = [], {}
    for name in BOUNDARY_TANGENT:
        pr = PRESETS[name]
        model, x = pr.model(), pr.build()
        if model.kind == "ball":
            start = model.boundary_samples(500, rng)
        else:
            grid = model.default_grid()
            nodes = grid.nodes.reshape(-1, grid.dim)
            start = nodes[model.on_boundary(nodes)]
        worst = 0.0
        for t in (-2.0, -1.0, -0.5, 0.5, 1.0, 2.0):
            y = flow_points(x, t, start, model=model)
            worst = max(worst, float(np.max(np.linalg.norm(y - model.project_to_boundary(y), axis=-1))))
        checks.append(at_most(f"boundary_drift[{name}]", worst, 1e-9))
        results[name] = {"boundary_points": len(start), "max_drift": worst}
    return checks, results


# 4 ------------------------------------------------------------------------


def section_property(rng):
    model = DiskD2()
    t0 = time.perf_counter()
    restriction, outside = [], []
    for _ in range(20):
        psi = random_boundary_diffeo(rng, rng.uniform(0.05, 0.3))
        k = section_k(psi, model=model)
        restriction.append(restrict_R(k).sup_distance(psi))
        far = collar_depth(k.grid) >= model.collar.s_prime
        nodes = k.grid.nodes.reshape(-1, 2)
        outside.append(float(np.max(np.abs(k.values.reshape(-1, 2)[far] - nodes[far]))))
    k_id = section_k(BoundaryDiffeo.identity(), model=model)
    id_error = float(np.max(np.abs(k_id.values - k_id.grid.nodes)))
    elapsed = time.perf_counter() - t0
    checks = [
        at_most("sup_restriction_error", max(restriction), 1e-6),
        at_most("sup_identity_outside_collar", max(outside), 1e-9),
        equals("k_identity_exact", id_error, 0.0),
        at_most("runtime_ms", elapsed * 1e3, 60_000.0),
    ]
    return checks, {"restriction_errors": restriction, "outside_collar_errors": outside}


# 5 ------------------------------------------------------------------------


def morphism_and_error_support(rng):
    model = DiskD2()
    grid = default_disk_grid()
    in_ns = collar_depth(grid) <= model.collar.s + 1e-12
    nodes = grid.nodes.reshape(-1, 2)
    morph, eps_ns, eps_interior = [], [], []
    for _ in range(10):
        phi = random_boundary_diffeo(rng, rng.uniform(0.05, 0.2))
        psi = random_boundary_diffeo(rng, rng.uniform(0.05, 0.2))
        a, b = theta_s_morphism(phi, model=model), theta_s_morphism(psi, model=model)
        morph.append(a.compose(b).sup_distance(theta_s_morphism(phi.compose(psi), model=model)))
        eps = epsilon_error(phi, psi, model=model, grid=grid)
        move = np.max(np.abs(eps.values.reshape(-1, 2) - nodes), axis=-1)
        eps_ns.append(float(move[in_ns].max()))
        eps_interior.append(float(move.max()))
    checks = [at_most("theta_s_multiplicativity", max(morph), 1e-6), at_most("epsilon_on_N_s", max(eps_ns), 1e-6)]
    return checks, {"theta_s_errors": morph, "epsilon_on_N_s": eps_ns, "epsilon_sup_anywhere": eps_interior}


# 6 ------------------------------------------------------------------------

CONDITION_FIELDS = (
    (("0", "x2"), True),
    (("0.5*x2", "x2"), True),
    (("x2", "0"), False),
    (("x2*cos(x1)", "x2^2"), False),
)


def condition_independence(rng):
    model = HalfSpacePatch(2)
    metric = euclidean_metric(2)
    x = np.zeros(2)
    checks, results = [], {}
    for comps, expected in CONDITION_FIELDS:
        z = field_from_components(list(comps), tangent=True)
        rep = check_condition_II(model, metric, z, x, n_random_metrics=10, n_random_connections=3, rng=rng)
        label = f"Z=({comps[0]}, {comps[1]})"
        checks += [
            equals(f"satisfied[{label}]", rep.satisfied, expected),
            equals(f"consistent[{label}]", rep.consistent, True),
            at_most(f"max_angle[{label}]", rep.max_angle, PARALLEL_TOL),
        ]
        results[label] = {
            "pairs": len(rep.entries),
            "values": [e["value"] for e in rep.entries],
            "max_angle": rep.max_angle,
        }
    return checks, results


# 7 ------------------------------------------------------------------------


def heisenberg_ranks(rng):
    t0 = time.perf_counter()
    checks, results = [], {}
    for n in (1, 2, 3):
        rm = rank_map(n, 10_000, rng, pole_samples=20)
        checks.append(equals(f"rank_exceptions[n={n}]", rm.exceptions(), 0))
        checks.append(at_least(f"pole_samples[n={n}]", int(rm.pole_mask.sum()), 20))
        results[f"n={n}"] = rm.to_json()
    d3 = heisenberg_model(3)
    spans3 = [bracket_generation_check(d3, p, 2) for p in sphere_samples(7, 100, rng)]
    checks.append(equals("depth2_span_n=3_min", min(spans3), 6))
    d1 = heisenberg_model(1)
    spans1 = [bracket_generation_check(d1, p, 3) for p in sphere_samples(3, 100, rng)]
    checks.append(equals("depth3_span_n=1_max", max(spans1), 1))
    d2 = heisenberg_model(2)
    a = 1 / np.sqrt(2)
    p = np.array([a, 0.0, 0.0, a, 0.0])
    checks.append(equals("n=2_obstruction_misses_Z'", misses_direction(d2, p, 2, "split"), True))
    results["n=2_obstruction"] = {
        "point": p,
        "split_span": bracket_generation_check(d2, p, 2, "split"),
        "projected_span": bracket_generation_check(d2, p, 2, "projected"),
    }
    checks.append(at_most("runtime_ms", (time.perf_counter() - t0) * 1e3, 120_000.0))
    return checks, results


# 8 ------------------------------------------------------------------------

RECHECK_FLOW = FlowSettings(abs_tol=1e-13, rel_tol=1e-13, max_step=0.02)


def factorization(rng):
    runs = (
        ("interior", 1, factorize_interior, None),
        ("interior", 2, factorize_interior, None),
        ("boundary", 2, factorize_boundary, "g_hat_boundary_max"),
        ("boundary_fixing", 2, factorize_boundary_fixing, "f_hat_boundary_max"),
    )
    checks, results = [], {}
    for variant, dim, solve, vanish_key in runs:
        amp = (0.01, 0.05) if variant == "interior" else (0.005, 0.02)
        residuals, vanish = [], []
        for _ in range(20):
            target = random_target(variant, dim, rng, rng.uniform(*amp))
            res = solve(target)
            recheck = float(np.max(np.abs(res.recompose(RECHECK_FLOW) - target.values)))
            residuals.append(recheck)
            if vanish_key:
                vanish.append(res.extras[vanish_key])
        label = f"{variant}[n={dim}]"
        checks.append(at_most(f"recheck_residual[{label}]", max(residuals), 1e-5))
        if vanish_key:
            checks.append(at_most(f"boundary_vanishing[{label}]", max(vanish), 1e-8))
        results[label] = {"recheck_residuals": residuals, "boundary_vanishing": vanish}
    return checks, results


# 9 ------------------------------------------------------------------------


def counterexample(rng):
    recipes = random_recipes(rng, 100)
    default = counterexample_run(DEFAULT_GENERATOR, recipes, 0.1)
    regular = counterexample_run("x*(1-x)", recipes, 0.1)
    literal = counterexample_run("sinh(x*(x-1))", recipes, 0.1)
    checks = [
        at_most("default_max_deviation_from_one", default.max_deviation_from_one, OBSTRUCTION_TOL),
        at_least("default_min_gap", default.min_gap, 0.369),
        at_most("target_derivative_error", abs(default.target_derivative - np.exp(0.1 * np.pi)), 1e-15),
        at_most("default_cross_check", default.max_cross_check_error, CROSS_CHECK_TOL),
        equals("x(1-x)_obstruction", regular.obstruction, False),
        at_most("x(1-x)_cross_check", regular.max_cross_check_error, CROSS_CHECK_TOL),
    ]
    summary = lambda r: {k: v for k, v in r.to_json().items() if k != "recipes"}  # noqa: E731
    return checks, {"default": summary(default), "x(1-x)": summary(regular), "sinh(x(x-1))": summary(literal)}


# 10 -----------------------------------------------------------------------


def _circle_distance(p, center):
    return np.abs((p[:, 0] - center + 0.5) % 1.0 - 0.5)


def partition_splitting(rng):
    model = Circle(1.0)
    grid = Grid.circle(512, 1.0)
    amp = 0.05 * rng.uniform(0.5, 1.0)
    path = DiffeoPath.from_function(
        grid, lambda t, p: p + t * amp * np.sin(2 * np.pi * p), model=model, boundary_preserving=True
    )
    # lambda_1 = 1 within 0.1 of 0 and 0 beyond 0.4; lambda_2 = 1 - lambda_1
    first = lambda p: 1.0 - smoothstep((_circle_distance(p, 0.0) - 0.1) / 0.3)  # noqa: E731
    partition = [ScalarField(first, "lambda1"), ScalarField(lambda p: 1.0 - first(p), "lambda2")]
    cover = [lambda p, c=c: _circle_distance(p, c) < 0.4 for c in (0.0, 0.5)]
    factors = split_by_partition(path, partition, cover)
    composed = factors[1].compose(factors[0])
    endpoint = composed.sup_distance(path.end)
    nodes = grid.nodes.reshape(-1, 1)
    leaks = []
    for phi, u in zip(factors, cover):
        outside = ~u(nodes)
        leaks.append(float(np.max(np.abs(phi.values.reshape(-1, 1)[outside] - nodes[outside]))))
    checks = [at_most("endpoint_error", endpoint, 1e-6), at_most("support_leak", max(leaks), 1e-9)]
    return checks, {"amplitude": amp, "factors": len(factors), "support_leaks": leaks}


CRITERIA: dict = {
    1: ("flow oracle for sin(pi x) d/dx", flow_oracle),
    2: ("derivative oracle of the same flow", derivative_oracle),
    3: ("boundary preservation of catalog fields", boundary_preservation),
    4: ("local section restricts to its argument", section_property),
    5: ("collar morphism and error-term support", morphism_and_error_support),
    6: ("condition II independence of metric and connection", condition_independence),
    7: ("Heisenberg ball rank map and brackets", heisenberg_ranks),
    8: ("flow factorization of near-identity targets", factorization),
    9: ("boundary-derivative counterexample", counterexample),
    10: ("partition-of-unity splitting", partition_splitting),
}


def run_criterion(number: int, seed: int = 0) -> CriterionResult:
    title, fn = CRITERIA[number]
    rng = np.random.default_rng([seed, number])
    out = CriterionResult(number, title)
    t0 = time.perf_counter()
    try:
        out.checks, out.results = fn(rng)
    except Exception as exc:  # recorded in the report rather than aborting the battery
        out.error = f"{type(exc).__name__}: {exc}"
    out.runtime_ms = (time.perf_counter() - t0) * 1e3
    return out


def thread_count() -> int:
    """Worker cap from ``BFLOW_THREADS`` (default 1), never above the CPU count."""
    try:
        requested = max(1, int(os.environ.get("BFLOW_THREADS", "1")))
    except ValueError:
        requested = 1
    return min(requested, os.cpu_count() or 1)


def run_criteria(numbers: Iterable[int] = tuple(CRITERIA), seed: int = 0, progress: Optional[Callable] = None):
    numbers = list(numbers)
    workers = min(thread_count(), len(numbers)) or 1
    if workers == 1:
        results = []
        for k in numbers:
            results.append(run_criterion(k, seed))
            if progress:
                progress(results[-1])
        return results
    # separate processes: the criteria are CPU bound and timed
    with ProcessPoolExecutor(workers) as pool:
        results = list(pool.map(run_criterion, numbers, [seed] * len(numbers)))
    if progress:
        for r in results:
            progress(r)
    return results
