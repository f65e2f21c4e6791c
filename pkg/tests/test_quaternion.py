import numpy as np
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from avatarsplat import quaternion as quat
from conftest import central_diff, rel_err

quats = arrays(np.float64, 4, elements=st.floats(-1, 1)).filter(lambda q: np.linalg.norm(q) > 0.1)


def test_quarter_turn_about_z_maps_x_to_y():
    q = quat.from_axis_angle([0, 0, 1], np.pi / 2)
    np.testing.assert_allclose(quat.to_matrix(q) @ [1, 0, 0], [0, 1, 0], atol=1e-15)


@given(quats, quats)
def test_product_matches_matrix_composition(a, b):
    lhs = quat.to_matrix(quat.multiply(a, b))
    rhs = quat.to_matrix(a) @ quat.to_matrix(b)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


@given(quats, quats)
def test_left_matrix_is_the_product(a, b):
    np.testing.assert_allclose(quat.left_matrix(a) @ b, quat.multiply(a, b), atol=1e-14)


@given(quats)
def test_matrix_roundtrip_up_to_sign(q):
    qn = quat.normalize(q)
    back = quat.from_matrix(quat.to_matrix(qn))
    assert back[0] >= 0
    assert min(np.abs(back - qn).max(), np.abs(back + qn).max()) < 1e-9


@given(quats)
def test_rotation_matrix_is_proper_orthonormal(q):
    R = quat.to_matrix(q)
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert abs(np.linalg.det(R) - 1.0) < 1e-12


def test_matrix_gradient_matches_finite_differences(rng):
    q = rng.normal(size=4) * 1.7
    G = rng.normal(size=(3, 3))
    fd = central_diff(lambda: float(np.sum(G * quat.to_matrix(q))), q, 1e-6)
    assert rel_err(quat.matrix_grad_to_quat(q, G), fd) < 1e-7


def test_normalize_gradient_matches_finite_differences(rng):
    q = rng.normal(size=4)
    g = rng.normal(size=4)
    fd = central_diff(lambda: float(g @ quat.normalize(q)), q, 1e-6)
    n = np.linalg.norm(q)
    assert rel_err(quat.normalize_backward(q / n, n, g), fd) < 1e-7
