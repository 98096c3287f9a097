import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bflow.errors import DomainError, PreconditionError
from bflow.geometry import (
    NOT_IN_COLLAR,
    Circle,
    DiskD2,
    EuclideanBall,
    HalfSpacePatch,
    Interval01,
    PointClass,
    classify_point,
    collar_coords,
    covariant_derivative,
    euclidean_metric,
    model_from_json,
    outward_normal,
    random_connection,
    random_metric,
    scaled_metric,
)
from bflow.fields import VectorField


def test_classify_points():
    assert classify_point(Interval01(), 0.0) is PointClass.BOUNDARY
    assert classify_point(DiskD2(), [0.3, 0.4]) is PointClass.INTERIOR
    assert classify_point(Interval01(), 1.5) is PointClass.OUTSIDE
    assert classify_point(Circle(1.0), [0.3]) is PointClass.INTERIOR


def test_classify_rejects_bad_input():
    with pytest.raises(DomainError):
        classify_point(DiskD2(), [0.1])
    with pytest.raises(DomainError):
        classify_point(Interval01(), float("nan"))


def test_disk_collar_coordinates():
    cc = collar_coords(DiskD2(), [0.9, 0.0])
    assert cc.b[0] == pytest.approx(0.0)
    assert cc.r == pytest.approx(0.1, abs=1e-14)
    edge = collar_coords(DiskD2(), [1.0, 0.0])
    assert edge.r == 0.0
    assert collar_coords(DiskD2(), [0.0, 0.0]) is NOT_IN_COLLAR


def test_collar_outside_point_raises():
    with pytest.raises(DomainError):
        collar_coords(DiskD2(), [2.0, 0.0])


def test_outward_normals():
    np.testing.assert_allclose(outward_normal(Interval01(), euclidean_metric(1), [0.0]), [-1.0])
    np.testing.assert_allclose(outward_normal(DiskD2(), euclidean_metric(2), [1.0, 0.0]), [1.0, 0.0], atol=1e-15)
    # |v|_g = 1 in g = 4 I halves the radial vector
    np.testing.assert_allclose(outward_normal(DiskD2(), scaled_metric(4.0, 2), [1.0, 0.0]), [0.5, 0.0], atol=1e-15)


def test_outward_normal_needs_boundary_point():
    with pytest.raises(PreconditionError):
        outward_normal(DiskD2(), euclidean_metric(2), [0.5, 0.0])


def _field(fn):
    return VectorField(lambda p: np.stack(fn(p), axis=-1), 2)


def test_covariant_derivative_flat_constant_field_vanishes():
    z = VectorField.constant([0.3, -1.2])
    out = covariant_derivative(euclidean_metric(2), [0.7, 0.2], z, [0.1, 0.4])
    np.testing.assert_allclose(out, 0.0, atol=1e-12)


def test_covariant_derivative_half_plane_oracles():
    h, g = HalfSpacePatch(2), euclidean_metric(2)
    nu = outward_normal(h, g, [0.0, 0.0])
    z_normal = _field(lambda p: (np.zeros(len(p)), p[:, 1]))
    z_shear = _field(lambda p: (p[:, 1], np.zeros(len(p))))
    np.testing.assert_allclose(covariant_derivative(g, nu, z_normal, [0, 0], model=h), [0.0, -1.0], atol=1e-9)
    np.testing.assert_allclose(covariant_derivative(g, nu, z_shear, [0, 0], model=h), [-1.0, 0.0], atol=1e-9)


@given(st.integers(0, 2**32 - 1))
def test_random_metrics_are_positive_definite(seed):
    rng = np.random.default_rng(seed)
    g = random_metric(3, rng)
    p = rng.uniform(-1, 1, (20, 3))
    eig = np.linalg.eigvalsh(g(p))
    assert np.all(eig >= 0.5 - 1e-12)


@given(st.integers(0, 2**32 - 1))
def test_random_connection_is_torsion_free(seed):
    rng = np.random.default_rng(seed)
    conn = random_connection(euclidean_metric(2), rng)
    gamma = conn.christoffel(np.zeros(2))
    np.testing.assert_allclose(gamma, np.swapaxes(gamma, 1, 2), atol=1e-12)


@given(st.floats(0.0, 2 * np.pi), st.floats(0.0, 0.7))
def test_disk_collar_round_trip(theta, r):
    p = np.array([(1 - r) * np.cos(theta), (1 - r) * np.sin(theta)])
    cc = collar_coords(DiskD2(), p)
    assert cc.r == pytest.approx(r, abs=1e-12)
    back = DiskD2().collar.embed(np.atleast_1d(cc.b)[None, :], np.array([cc.r]))[0]
    np.testing.assert_allclose(back, p, atol=1e-12)


def test_ball_boundary_samples_lie_on_sphere(rng):
    ball = EuclideanBall(2)
    pts = ball.boundary_samples(200, rng)
    np.testing.assert_allclose(np.linalg.norm(pts, axis=1), 1.0, atol=1e-14)
    assert ball.on_boundary(pts).all()


@pytest.mark.parametrize(
    "obj, cls",
    [({"kind": "interval"}, Interval01), ({"kind": "disk"}, DiskD2), ({"kind": "ball", "n": 2}, EuclideanBall)],
)
def test_model_from_json(obj, cls):
    assert isinstance(model_from_json(obj), cls)


def test_model_from_json_unknown_kind():
    with pytest.raises(ValueError):
        model_from_json({"kind": "torus"})
