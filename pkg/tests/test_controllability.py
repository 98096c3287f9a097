import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bflow.catalog import field_from_components
from bflow.controllability import (
    bracket_generation_check,
    check_condition_II,
    counterexample_run,
    factorize_boundary,
    factorize_boundary_fixing,
    factorize_interior,
    heisenberg_model,
    misses_direction,
    random_target,
    rank_map,
    tangent_rank,
    variant_grid,
)
from bflow.controllability.counterexample import boundary_slope
from bflow.controllability.heisenberg import tangent_ranks
from bflow.diffeo import DiscreteDiffeomorphism
from bflow.errors import ConvergenceError, DomainError, PreconditionError
from bflow.expr import Expr
from bflow.geometry import HalfSpacePatch, euclidean_metric, random_connection, scaled_metric
from bflow.integrate import FlowSettings

H2 = HalfSpacePatch(2)
ORIGIN = np.zeros(2)
RECHECK = FlowSettings(abs_tol=1e-13, rel_tol=1e-13, max_step=0.02)


def map_of(grid, *components):
    return DiscreteDiffeomorphism.from_function(grid, lambda p: np.stack([c(p) for c in components], -1))


def recheck(result, target):
    return float(np.max(np.abs(result.recompose(RECHECK) - target.values)))


# --- condition II -------------------------------------------------------------


def test_condition_II_normal_field_holds():
    rep = check_condition_II(H2, euclidean_metric(2), field_from_components(["0", "x2"], True), ORIGIN)
    assert rep.entries[0]["value"] == pytest.approx(1.0, abs=1e-9)
    assert rep.satisfied


def test_condition_II_shear_fails():
    rep = check_condition_II(H2, euclidean_metric(2), field_from_components(["x2", "0"], True), ORIGIN)
    assert rep.entries[0]["value"] == pytest.approx(0.0, abs=1e-9)
    assert not rep.satisfied


def test_condition_II_is_metric_and_connection_independent(rng):
    g = scaled_metric(4.0, 2)
    rep = check_condition_II(
        H2,
        euclidean_metric(2),
        field_from_components(["0", "x2"], True),
        ORIGIN,
        extra_metrics=[g],
        extra_connections=[random_connection(g, rng)],
        n_random_metrics=5,
        n_random_connections=2,
        rng=rng,
    )
    assert rep.satisfied and rep.consistent and rep.parallel
    assert rep.max_angle <= 1e-6


def test_condition_II_preconditions():
    with pytest.raises(PreconditionError):
        check_condition_II(H2, euclidean_metric(2), field_from_components(["0", "x2"], True), [0.0, 0.3])
    with pytest.raises(PreconditionError):
        check_condition_II(H2, euclidean_metric(2), field_from_components(["1", "x2"], True), ORIGIN)


# --- Heisenberg ball -------------------------------------------------------------


def test_tangent_rank_oracles():
    assert tangent_rank(heisenberg_model(1), [1.0, 0.0, 0.0])[0] == 1
    assert tangent_rank(heisenberg_model(1), [0.0, 0.0, 1.0])[0] == 2
    a = 1 / np.sqrt(2)
    assert tangent_rank(heisenberg_model(2), [a, 0.0, 0.0, a, 0.0])[0] == 3


def test_rank_requires_sphere_point():
    with pytest.raises(DomainError):
        tangent_rank(heisenberg_model(1), [0.5, 0.0, 0.0])


def test_constraint_vectors_and_missing_direction():
    d = heisenberg_model(1)
    e1, e2 = d.e1e2(np.array([1.0, 0.0, 0.0]))
    np.testing.assert_allclose([e1[0], e2[0]], [1.0, 0.0])
    np.testing.assert_allclose(d.missing_direction([1.0, 0.0, 0.0]), [0.0, 0.0, 1.0])
    assert d.missing_direction([0.0, 0.0, 1.0]) is None


def test_bracket_generation_cases():
    p7 = np.zeros(7)
    p7[0] = 1.0
    assert bracket_generation_check(heisenberg_model(3), p7, 2) == 6
    assert bracket_generation_check(heisenberg_model(1), [0.6, 0.0, 0.8], 3) == 1
    a = 1 / np.sqrt(2)
    assert misses_direction(heisenberg_model(2), np.array([a, 0.0, 0.0, a, 0.0]), 2, "split")


@given(st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_generic_rank_is_2n_minus_1(n, seed):
    rng = np.random.default_rng(seed)
    p = rng.standard_normal((50, 2 * n + 1))
    p /= np.linalg.norm(p, axis=1, keepdims=True)
    assert np.all(tangent_ranks(heisenberg_model(n), p) == 2 * n - 1)


def test_rank_map_csv_layout(rng):
    rm = rank_map(1, 50, rng, pole_samples=3, bracket_samples=2)
    lines = rm.to_csv().split("\n")
    assert lines[0] == "x1,y1,z,rank,bracket_span_depth2,bracket_span_depth3"
    assert len(lines) == 1 + 53 + 1 and lines[-1] == ""
    assert rm.exceptions() == 0
    assert lines[3].endswith(",1,,")


# --- factorization -------------------------------------------------------------


def test_factorize_identity_gives_zero_factors():
    for variant, solve in (
        ("interior", factorize_interior),
        ("boundary", factorize_boundary),
        ("boundary_fixing", factorize_boundary_fixing),
    ):
        grid = variant_grid(variant, 2)
        res = solve(DiscreteDiffeomorphism.identity(grid))
        assert res.residual == 0.0
        assert all(np.max(np.abs(f.values)) == 0.0 for f in res.factors)


def test_factorize_interior_shear():
    grid = variant_grid("interior", 2)
    target = map_of(grid, lambda p: p[:, 0] + 0.1 * np.sin(p[:, 1]), lambda p: p[:, 1])
    res = factorize_interior(target)
    assert res.residual <= 1e-10
    f1, f2 = res.factors
    assert np.max(np.abs(f1.values - 0.1 * np.sin(grid.nodes[..., 1]))) <= 1e-10
    assert np.max(np.abs(f2.values)) <= 1e-12


def test_factorize_interior_one_dimensional():
    grid = variant_grid("interior", 1)
    target = DiscreteDiffeomorphism.from_function(grid, lambda p: p + 0.1 * p * (1 - p))
    res = factorize_interior(target)
    assert res.residual <= 1e-6
    assert recheck(res, target) <= 1e-6


def test_factorize_interior_requires_fixed_origin():
    grid = variant_grid("interior", 1)
    with pytest.raises(PreconditionError):
        factorize_interior(DiscreteDiffeomorphism.from_function(grid, lambda p: p + 0.01))


def test_factorize_boundary_fixing_shear():
    grid = variant_grid("boundary_fixing", 2)
    profile = lambda p: 0.05 * p[:, 1] * np.exp(-p[:, 1])  # noqa: E731
    res = factorize_boundary_fixing(map_of(grid, lambda p: p[:, 0] + profile(p), lambda p: p[:, 1]))
    assert res.residual <= 1e-10
    f_hat = res.coefficient_values()["d1"]
    assert np.max(np.abs(f_hat - profile(grid.nodes.reshape(-1, 2)).reshape(grid.shape))) <= 1e-10
    assert res.extras["f_hat_boundary_max"] <= 1e-8


def test_factorize_boundary_fixing_general():
    grid = variant_grid("boundary_fixing", 2)
    target = map_of(grid, lambda p: p[:, 0] + 0.05 * p[:, 1], lambda p: p[:, 1] * (1 + 0.05 * p[:, 1]))
    res = factorize_boundary_fixing(target)
    assert res.residual <= 1e-6
    assert res.extras["f_hat_boundary_max"] <= 1e-8
    assert recheck(res, target) <= 1e-6


def test_factorize_boundary_fixing_rejects_moving_face():
    grid = variant_grid("boundary_fixing", 2)
    with pytest.raises(PreconditionError):
        factorize_boundary_fixing(map_of(grid, lambda p: p[:, 0] + 0.01 * np.sin(p[:, 0]), lambda p: p[:, 1]))


def test_factorize_boundary_normal_factor_vanishes(rng):
    target = random_target("boundary", 2, rng, 0.01)
    res = factorize_boundary(target)
    assert res.extras["g_hat_boundary_max"] <= 1e-8
    assert recheck(res, target) <= 1e-5


def test_factorize_boundary_rejects_boundary_motion():
    grid = variant_grid("boundary", 2)
    target = map_of(grid, lambda p: p[:, 0], lambda p: p[:, 1] + 0.01 * np.cos(p[:, 0]))
    with pytest.raises((PreconditionError, ConvergenceError)):
        factorize_boundary(target)


@pytest.mark.parametrize(
    "variant, dim, solve",
    [("interior", 1, factorize_interior), ("interior", 2, factorize_interior), ("boundary_fixing", 2, factorize_boundary_fixing)],
)
def test_random_targets_recompose(variant, dim, solve):
    target = random_target(variant, dim, np.random.default_rng(dim), 0.02)
    assert recheck(solve(target), target) <= 1e-5


# --- counterexample ------------------------------------------------------------


def test_default_generator_is_flat_at_zero():
    rep = counterexample_run(recipes=[["1"], ["2 + x", "-3*sin(x)"], ["0.5*x"]], t_target=0.1)
    assert abs(rep.b_prime_0) <= 1e-30  # complex step leaves O(h^2)
    np.testing.assert_array_equal(rep.derivatives, 1.0)
    assert rep.obstruction
    assert rep.min_gap >= np.exp(0.1 * np.pi) - 1 - 1e-12
    assert rep.max_cross_check_error <= 1e-5


@given(st.floats(-1.5, 1.5).filter(lambda c: abs(c) > 1e-3))
def test_regular_generator_moves_derivative(c):
    rep = counterexample_run("x*(1-x)", [[repr(c)]], 0.1)
    # b'(0) = 1 for x(1 - x), so the derivative is e^c
    assert rep.derivatives[0] == pytest.approx(np.exp(c), rel=1e-12)
    assert not rep.obstruction
    assert rep.max_cross_check_error <= 1e-5


def test_boundary_slope_of_literal_generator():
    assert boundary_slope(Expr("sinh(x*(x-1))", ("x",))) == pytest.approx(-1.0, abs=1e-12)
    assert boundary_slope(lambda x: np.abs(x) ** 3 + 2 * x) == pytest.approx(2.0, abs=1e-6)


def test_counterexample_preconditions():
    with pytest.raises(PreconditionError):
        counterexample_run("x", [["1"]])
    with pytest.raises(PreconditionError):
        counterexample_run("x*(1-x)", [])
