import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bflow.boundary import (
    BoundaryDiffeo,
    ExtensionOperator,
    annulus_grid,
    boundary_log_derivative,
    boundary_log_derivative_by_path,
    collar_depth,
    decompose,
    default_disk_grid,
    epsilon_error,
    extend_theta,
    random_boundary_diffeo,
    restrict_R,
    section_k,
    section_report,
    theta_s_morphism,
    twist_map,
)
from bflow.diffeo import DiscreteDiffeomorphism
from bflow.errors import PreconditionError
from bflow.geometry import DiskD2, Interval01

DISK = DiskD2()
SIN = BoundaryDiffeo.from_function(lambda th: th + 0.1 * np.sin(th))
COS = BoundaryDiffeo.from_function(lambda th: th + 0.1 * np.cos(th))


def test_extension_of_zero_and_angular_fields():
    op = ExtensionOperator.for_model(DISK)
    pts = np.array([[0.9, 0.0], [0.0, -0.85], [0.0, 0.0], [0.2, 0.1]])
    assert np.max(np.abs(extend_theta(op, 0.0)(pts))) == 0.0
    out = extend_theta(op, 1.0)(pts)
    # chi = 1 for r < s: the unit angular field (-y, x)
    np.testing.assert_allclose(out[:2], [[0.0, 0.9], [0.85, 0.0]], atol=1e-15)
    np.testing.assert_array_equal(out[2:], 0.0)
    assert extend_theta(ExtensionOperator.for_model(Interval01()), 1.0)(np.array([[0.0]]))[0, 0] == 0.0


def test_restriction_oracles():
    ident = DiscreteDiffeomorphism.identity(default_disk_grid(), DISK)
    assert np.max(np.abs(restrict_R(ident).u)) <= 1e-15
    np.testing.assert_allclose(restrict_R(twist_map(0.3)).u, 0.3, atol=1e-12)


def test_restriction_rejects_orientation_reversal():
    grid = default_disk_grid()
    flip = DiscreteDiffeomorphism.from_function(grid, lambda p: p * [1.0, -1.0], DISK, boundary_preserving=True)
    with pytest.raises(PreconditionError):
        restrict_R(flip)


def test_boundary_diffeo_rejects_fold():
    with pytest.raises(PreconditionError):
        BoundaryDiffeo.from_function(lambda th: th + 1.5 * np.sin(th))


def test_section_of_identity_is_identity():
    assert section_k(BoundaryDiffeo.identity()).sup_distance() == 0.0


def test_section_of_rotation_is_twist():
    assert section_k(BoundaryDiffeo.rotation(0.3)).sup_distance(twist_map(0.3)) <= 1e-8


def test_section_restricts_back():
    rep = section_report(SIN)
    assert rep["sup_restriction_error"] <= 1e-6
    assert rep["sup_identity_outside_collar"] <= 1e-9


def test_section_domain_is_enforced():
    big = BoundaryDiffeo.from_function(lambda th: th + 0.6 * np.sin(th))
    with pytest.raises(PreconditionError):
        section_k(big)


def test_theta_s_rotation_is_rigid():
    grid = annulus_grid(DISK)
    m = theta_s_morphism(BoundaryDiffeo.rotation(0.2), grid=grid)
    nodes = grid.nodes.reshape(-1, 2)
    c, s = np.cos(0.2), np.sin(0.2)
    assert np.max(np.abs(m.values.reshape(-1, 2) - nodes @ np.array([[c, s], [-s, c]]))) <= 1e-9
    assert theta_s_morphism(BoundaryDiffeo.identity()).sup_distance() <= 1e-14


def test_theta_s_is_multiplicative():
    lhs = theta_s_morphism(COS).compose(theta_s_morphism(SIN))
    assert lhs.sup_distance(theta_s_morphism(COS.compose(SIN))) <= 1e-6


def test_epsilon_trivial_cases():
    ident = BoundaryDiffeo.identity()
    assert epsilon_error(ident, ident).sup_distance() <= 1e-14
    rot = epsilon_error(BoundaryDiffeo.rotation(0.2), BoundaryDiffeo.rotation(-0.1))
    assert rot.sup_distance() <= 1e-7


def test_epsilon_is_identity_on_collar_only():
    grid = default_disk_grid()
    eps = epsilon_error(COS, SIN, grid=grid)
    move = np.max(np.abs(eps.values.reshape(-1, 2) - grid.nodes.reshape(-1, 2)), axis=-1)
    in_ns = collar_depth(grid) <= DISK.collar.s + 1e-12
    assert move[in_ns].max() <= 1e-6
    assert move.max() > 1e-4


def test_decompose_oracles():
    grid = default_disk_grid()
    psi, rest = decompose(DiscreteDiffeomorphism.identity(grid, DISK))
    assert np.max(np.abs(psi.u)) <= 1e-15 and rest.sup_distance() <= 1e-12
    psi, rest = decompose(twist_map(0.25))
    np.testing.assert_allclose(psi.u, 0.25, atol=1e-12)
    assert rest.sup_distance() <= 1e-8


def test_decompose_separates_interior_bump():
    grid = default_disk_grid()

    def bump(p):
        r2 = np.sum(p * p, axis=-1, keepdims=True)
        w = np.where(r2 < 0.16, np.exp(-1.0 / np.maximum(0.16 - r2, 1e-300)) * np.exp(1 / 0.16), 0.0)
        return p + 0.02 * w * np.stack([-p[:, 1], p[:, 0]], -1)

    inner = DiscreteDiffeomorphism.from_function(grid, bump, DISK, boundary_preserving=True)
    phi = twist_map(0.2).compose(inner)
    psi, rest = decompose(phi)
    np.testing.assert_allclose(psi.u, 0.2, atol=1e-9)
    assert rest.sup_distance(inner) <= 1e-6


def test_log_derivative_two_ways_agree():
    a1, a2 = boundary_log_derivative(SIN), boundary_log_derivative_by_path(SIN)
    th = np.linspace(0.0, 6.0, 40)
    for t in (0.0, 0.4, 1.0):
        assert np.max(np.abs(a1(t, th) - a2(t, th))) <= 1e-6


@given(st.integers(0, 2**32 - 1), st.floats(0.02, 0.29))
def test_random_boundary_maps_have_requested_norm(seed, c1):
    psi = random_boundary_diffeo(np.random.default_rng(seed), c1)
    assert psi.c1_norm() == pytest.approx(c1, rel=1e-12)


@given(st.floats(-3.0, 3.0), st.floats(-3.0, 3.0))
def test_rotations_compose_additively(a, b):
    comp = BoundaryDiffeo.rotation(a).compose(BoundaryDiffeo.rotation(b))
    np.testing.assert_allclose(comp.u, a + b, atol=1e-12)


def test_boundary_diffeo_json_round_trip():
    back = BoundaryDiffeo.from_json(SIN.to_json())
    np.testing.assert_array_equal(back.u, SIN.u)
