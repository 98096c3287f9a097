import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bflow import _kernels_py, kernels
from bflow.interp import Grid, GridSpline

compiled = pytest.importorskip("bflow._kernels", reason="compiled kernels not built")


@given(st.integers(4, 40), st.booleans(), st.integers(0, 2), st.integers(0, 2**32 - 1))
def test_eval_1d_backends_agree(n, periodic, deriv, seed):
    rng = np.random.default_rng(seed)
    coef = rng.standard_normal((n + (0 if periodic else 2), 3))
    u = rng.uniform(-0.5, n - 0.5, 64)
    if not periodic:
        u = np.clip(u, 0, n - 1)
    np.testing.assert_allclose(
        compiled.eval_1d(coef, u, n, periodic, deriv), _kernels_py.eval_1d(coef, u, n, periodic, deriv), atol=1e-12
    )


@given(st.integers(4, 20), st.integers(4, 20), st.booleans(), st.integers(0, 1), st.integers(0, 1), st.integers(0, 2**32 - 1))
def test_eval_2d_backends_agree(nu, nv, per_u, du, dv, seed):
    rng = np.random.default_rng(seed)
    coef = rng.standard_normal((nu + (0 if per_u else 2), nv + 2, 2))
    u = rng.uniform(0, nu - 1, 50)
    v = rng.uniform(0, nv - 1, 50)
    np.testing.assert_allclose(
        compiled.eval_2d(coef, u, v, nu, nv, per_u, False, du, dv),
        _kernels_py.eval_2d(coef, u, v, nu, nv, per_u, False, du, dv),
        atol=1e-12,
    )


def test_backend_is_compiled_by_default():
    if not os.environ.get("BFLOW_PURE_PYTHON"):
        assert kernels.BACKEND == "cython"


def test_pure_python_switch_runs_the_same_flow():
    code = (
        "from bflow import kernels; from bflow.catalog import preset; from bflow.flows import flow_map;"
        "pr = preset('sin_pi'); m = flow_map(pr.build(), 0.5, model=pr.model());"
        "print(kernels.BACKEND, repr(float(m([[0.37]])[0, 0])))"
    )
    env = {**os.environ, "BFLOW_PURE_PYTHON": "1"}
    pure = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout.split()
    env.pop("BFLOW_PURE_PYTHON")
    fast = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout.split()
    assert pure[0] == "python" and fast[0] == "cython"
    assert float(pure[1]) == pytest.approx(float(fast[1]), abs=1e-13)


@given(st.integers(8, 64))
def test_cubic_spline_reproduces_cubics(n):
    grid = Grid.box([0.0], [1.0], [n])
    x = grid.nodes[:, 0]
    spline = GridSpline(grid, (x**3 - 2 * x)[:, None])
    t = np.linspace(0.05, 0.95, 33)[:, None]
    # the not-a-knot end conditions make cubic interpolation exact for cubics
    assert np.max(np.abs(spline.at_points(t)[:, 0] - (t[:, 0] ** 3 - 2 * t[:, 0]))) <= 1e-12


def test_periodic_spline_interpolates_nodes():
    grid = Grid.circle(32, 2 * np.pi)
    data = np.sin(grid.nodes)
    spline = GridSpline(grid, data)
    np.testing.assert_allclose(spline.at_points(grid.nodes.reshape(-1, 1)), data, atol=1e-13)
