import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bflow.catalog import BOUNDARY_TANGENT, PRESETS, field_from_components, preset
from bflow.errors import ConfigError, FlowError
from bflow.expr import Expr, coordinate_names
from bflow.fields import VectorField, is_tangent_to_boundary
from bflow.flows import flow_points
from bflow.geometry import DiskD2
from bflow.integrate import FlowSettings, integrate
from bflow.report import at_least, at_most, equals, to_jsonable


def test_expression_grammar():
    e = Expr("x1^2 - 3*sin(x2)/2 + exp(-x1) + pi", coordinate_names(2))
    assert e(1.0, 0.5) == pytest.approx(1 - 1.5 * np.sin(0.5) + np.exp(-1) + np.pi)
    assert Expr("atan(x) * sinh(x) + cos(x)", ("x",))(0.3) == pytest.approx(np.arctan(0.3) * np.sinh(0.3) + np.cos(0.3))


@pytest.mark.parametrize(
    "text",
    ["__import__('os')", "x.real", "[x]", "x if x else 1", "tan(x)", "sin(x, x)", "y + 1", "'a'", "x = 1", "lambda: 1"],
)
def test_expression_rejects_everything_else(text):
    with pytest.raises(ConfigError):
        Expr(text, ("x",))


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_expression_matches_python(a, b):
    e = Expr("a*b - a/ (1 + b^2) + 2^a", ("a", "b"))
    assert e(a, b) == pytest.approx(a * b - a / (1 + b**2) + 2**a, rel=1e-12, abs=1e-12)


def test_constant_expression_broadcasts_on_points():
    out = Expr("2", ("x1", "x2")).on_points(np.zeros((5, 2)))
    np.testing.assert_array_equal(out, 2.0)


def test_field_from_components():
    x = field_from_components(["-x2", "x1"], tangent=True)
    np.testing.assert_allclose(x(np.array([[1.0, 2.0]])), [[-2.0, 1.0]])
    with pytest.raises(ConfigError):
        field_from_components([], tangent=True)


def test_unknown_preset():
    with pytest.raises(ConfigError):
        preset("nope")


@pytest.mark.parametrize("name", BOUNDARY_TANGENT)
def test_boundary_tangent_presets_are_tangent(name, rng):
    pr = PRESETS[name]
    ok, worst = is_tangent_to_boundary(pr.build(), pr.model(), n_samples=200, tol=1e-9, rng=rng)
    assert ok, worst


@pytest.mark.parametrize("name", [n for n, p in PRESETS.items() if p.exact_flow is not None])
def test_presets_match_their_closed_forms(name, rng):
    pr = PRESETS[name]
    model, field = pr.model(), pr.build()
    if model.dim < 3:
        pts = model.default_grid().nodes.reshape(-1, model.dim)
    else:
        pts = model.boundary_samples(50, rng) * rng.uniform(0.0, 1.0, (50, 1))
    for t in (0.3, -0.7):
        out = flow_points(field, t, pts, FlowSettings(1e-12, 1e-12), model if pr.tangent else None)
        assert np.max(np.abs(out - pr.exact_flow(t, pts))) <= 1e-8


def test_integrator_exponential_decay():
    y, _ = integrate(lambda t, y: -y, np.array([[1.0], [2.0]]), 0.0, 1.0)
    np.testing.assert_allclose(y[:, 0], [np.exp(-1), 2 * np.exp(-1)], rtol=1e-11)


def test_integrator_backwards_in_time():
    y, _ = integrate(lambda t, y: np.cos(t) * np.ones_like(y), np.zeros((1, 1)), 0.0, -2.0)
    assert y[0, 0] == pytest.approx(np.sin(-2.0), abs=1e-11)


def test_non_tangent_field_with_tangent_claim_is_caught():
    radial = VectorField(lambda p: p.copy(), 2, tangent=True)
    with pytest.raises(FlowError):
        flow_points(radial, 0.5, np.array([[1.0, 0.0]]), model=DiskD2())


def test_flow_settings_validate():
    with pytest.raises(ValueError):
        FlowSettings(abs_tol=0.0)
    with pytest.raises(ValueError):
        FlowSettings(max_step=-1.0)


def test_checks_and_json_conversion():
    assert at_most("a", 1e-9, 1e-8).passed and not at_most("a", float("nan"), 1.0).passed
    assert at_least("b", 0.4, 0.369).passed and not at_least("b", 0.3, 0.369).passed
    assert equals("c", 3, 3).passed and not equals("c", True, False).passed
    out = to_jsonable({"x": np.arange(3), "y": (np.float64(1.5), np.inf), "z": np.bool_(True), 1: np.int64(2)})
    assert out == {"x": [0, 1, 2], "y": [1.5, "inf"], "z": True, "1": 2}
