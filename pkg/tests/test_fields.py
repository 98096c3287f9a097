import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from bflow.diffeo import DiscreteDiffeomorphism
from bflow.errors import PreconditionError
from bflow.fields import (
    ModuleSpanElement,
    ScalarField,
    VectorField,
    build_chi,
    build_varphi,
    is_tangent_to_boundary,
    lie_bracket,
    module_span_eval,
    plateau_bump,
    pushforward,
    smoothstep,
)
from bflow.geometry import DiskD2, HalfSpacePatch, Interval01
from bflow.interp import Grid


def vf(*components):
    return VectorField(lambda p: np.stack([np.broadcast_to(c(p), (len(p),)) for c in components], -1), len(components))


def test_tangency_of_disk_and_interval_fields(rng):
    angular = vf(lambda p: -p[:, 1], lambda p: p[:, 0])
    ok, worst = is_tangent_to_boundary(angular, DiskD2(), rng=rng)
    assert ok and worst <= 1e-12
    radial = vf(lambda p: p[:, 0], lambda p: p[:, 1])
    ok, worst = is_tangent_to_boundary(radial, DiskD2(), rng=rng)
    assert not ok and worst == pytest.approx(1.0, abs=1e-12)
    ok, worst = is_tangent_to_boundary(vf(lambda p: p[:, 0] * (1 - p[:, 0])), Interval01())
    assert ok and worst == 0.0


def test_bracket_of_linear_fields():
    # [X, Y] = DY X - DX Y; for X = x d_y and Y = y d_x this is x d_x - y d_y
    x = vf(lambda p: 0 * p[:, 0], lambda p: p[:, 0])
    y = vf(lambda p: p[:, 1], lambda p: 0 * p[:, 0])
    np.testing.assert_allclose(lie_bracket(x, y, [1.0, 1.0]), [1.0, -1.0], atol=1e-9)
    np.testing.assert_allclose(lie_bracket(y, x, [1.0, 1.0]), [-1.0, 1.0], atol=1e-9)


def test_bracket_matches_symbolic_computation():
    a, b = sp.symbols("a b")
    xs = sp.Matrix([sp.sin(a) * b, a**2 + b])
    ys = sp.Matrix([sp.exp(b) * a, sp.cos(a * b)])
    jac = lambda f: f.jacobian([a, b])  # noqa: E731
    sym = (jac(ys) * xs - jac(xs) * ys).subs({a: 0.3, b: -0.7}).evalf()
    fx = sp.lambdify((a, b), list(xs), "numpy")
    fy = sp.lambdify((a, b), list(ys), "numpy")
    x = VectorField(lambda p: np.stack(np.broadcast_arrays(*fx(p[:, 0], p[:, 1])), -1), 2)
    y = VectorField(lambda p: np.stack(np.broadcast_arrays(*fy(p[:, 0], p[:, 1])), -1), 2)
    np.testing.assert_allclose(lie_bracket(x, y, [0.3, -0.7], order=4, h_fd=1e-3), np.array(sym, float).ravel(), atol=1e-9)


@given(st.floats(-2, 2), st.floats(-2, 2))
def test_bracket_is_antisymmetric(u, v):
    x = vf(lambda p: np.sin(p[:, 1]), lambda p: p[:, 0] ** 2)
    y = vf(lambda p: p[:, 0] * p[:, 1], lambda p: np.cos(p[:, 0]))
    np.testing.assert_allclose(lie_bracket(x, y, [u, v]), -lie_bracket(y, x, [u, v]), atol=1e-12)


def test_pushforward_oracles():
    g = Grid.box([-1.0], [1.0], [41])
    ident = DiscreteDiffeomorphism.identity(g)
    y = vf(lambda p: np.cos(p[:, 0]))
    np.testing.assert_allclose(pushforward(ident, y, [0.3]), [np.cos(0.3)], atol=1e-12)
    g2 = Grid.box([-1.0, -1.0], [1.0, 1.0], [21, 21])
    shift = DiscreteDiffeomorphism.from_function(g2, lambda p: p + [0.1, -0.05])
    np.testing.assert_allclose(pushforward(shift, VectorField.constant([0.4, 0.7]), [0.2, 0.2]), [0.4, 0.7], atol=1e-10)
    double = DiscreteDiffeomorphism.from_function(g, lambda p: 2 * p)
    np.testing.assert_allclose(pushforward(double, VectorField.constant([1.0]), [0.4]), [2.0], atol=1e-10)


def test_module_span_evaluation():
    d1, d2 = VectorField.constant([1.0, 0.0]), VectorField.constant([0.0, 1.0])
    x2 = ScalarField.coordinate(1)
    np.testing.assert_allclose(module_span_eval(ModuleSpanElement([], 2), [0.5, 0.2]), [0.0, 0.0])
    x = vf(lambda p: p[:, 0] ** 2, lambda p: p[:, 1])
    np.testing.assert_allclose(module_span_eval(ModuleSpanElement([(1.0, x)]), [0.5, 0.2]), [0.25, 0.2])
    np.testing.assert_allclose(module_span_eval(ModuleSpanElement([(x2, d1), (x2, d2)]), [0.5, 0.2]), [0.2, 0.2])


def test_chi_plateau_and_support():
    collar = HalfSpacePatch(2).collar
    chi = build_chi(collar)
    np.testing.assert_allclose(chi(np.array([[0.0, 0.1], [0.0, 0.6], [0.0, 0.9]])), [1.0, 0.0, 0.0])


def test_collar_rejects_unordered_radii():
    with pytest.raises(ValueError):
        HalfSpacePatch(2, r_max=0.75, s_prime=0.25, s=0.5)


@given(st.floats(-3, 3))
def test_cutoffs_stay_in_unit_interval(t):
    assert 0.0 <= float(smoothstep(t)) <= 1.0
    assert 0.0 <= float(plateau_bump(t)) <= 1.0


def test_varphi_both_signs_and_transversality():
    h = HalfSpacePatch(2)
    up = build_varphi(h, VectorField.constant([0.0, 1.0]), [0.0, 0.0])
    down = build_varphi(h, VectorField.constant([0.0, -1.0]), [0.0, 0.0])
    assert up(np.zeros((1, 2)))[0] == pytest.approx(1.0)
    assert down(np.zeros((1, 2)))[0] == pytest.approx(1.0)
    assert up(np.array([[0.95, 0.5]]))[0] == 0.0
    with pytest.raises(PreconditionError):
        build_varphi(h, VectorField.constant([1.0, 0.0]), [0.0, 0.0])
