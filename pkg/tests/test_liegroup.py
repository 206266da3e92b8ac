import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.linalg import expm, logm

from mlrdyn.liegroup import (
    Pose,
    StructuralError,
    ad_of,
    adjoint_inv_of,
    adjoint_of,
    bracket,
    exp_se3,
    hat,
    revolute_screw,
    rot_z,
    skew,
    unskew,
    vee,
    zyx_euler,
)

twists = arrays(np.float64, 6, elements=st.floats(-3, 3, allow_nan=False))
angles = st.floats(-4, 4, allow_nan=False)


def pose_of(xi, th=1.0):
    return exp_se3(xi, th)


@given(twists)
def test_hat_vee_round_trip(xi):
    assert np.array_equal(vee(hat(xi)), xi)


def test_vee_rejects_non_algebra_element():
    X = hat([1, 2, 3, 0.1, 0.2, 0.3])
    X[0, 1] += 1e-3
    with pytest.raises(StructuralError):
        vee(X)
    Y = hat(np.zeros(6))
    Y[3, 3] = 1.0
    with pytest.raises(StructuralError):
        vee(Y)
    with pytest.raises(StructuralError):
        vee(np.zeros((3, 3)))


@given(twists, angles)
def test_exp_matches_matrix_exponential(xi, th):
    T = expm(hat(xi) * th)
    np.testing.assert_allclose(exp_se3(xi, th).matrix(), T, atol=1e-9 * max(1, np.abs(T).max()))


def test_exp_small_angle_branch():
    xi = np.array([0.3, -0.2, 0.1, 1e-10, -2e-10, 3e-10])
    np.testing.assert_allclose(exp_se3(xi).matrix(), expm(hat(xi)), atol=1e-15)


def test_exp_zero_is_identity():
    assert np.array_equal(exp_se3(np.zeros(6)).matrix(), np.eye(4))


@given(twists, angles, angles)
def test_exp_one_parameter_subgroup(xi, a, b):
    lhs = exp_se3(xi, a) @ exp_se3(xi, b)
    np.testing.assert_allclose(lhs.matrix(), exp_se3(xi, a + b).matrix(), atol=1e-9)


@given(twists, twists)
def test_adjoint_transports_twists(a, xi):
    g = pose_of(a)
    T = g.matrix()
    lhs = adjoint_of(g) @ xi
    rhs = vee(T @ hat(xi) @ np.linalg.inv(T))
    np.testing.assert_allclose(lhs, rhs, atol=1e-8 * max(1, np.abs(rhs).max()))


@given(twists, twists)
def test_adjoint_is_homomorphism_and_inverse(a, b):
    g, h = pose_of(a), pose_of(b)
    np.testing.assert_allclose(adjoint_of(g @ h), adjoint_of(g) @ adjoint_of(h), atol=1e-8 * 50)
    np.testing.assert_allclose(adjoint_inv_of(g) @ adjoint_of(g), np.eye(6), atol=1e-9 * 50)


@given(twists, twists)
def test_ad_is_bracket(xi, eta):
    np.testing.assert_allclose(ad_of(xi) @ eta, bracket(xi, eta), atol=1e-9)


@given(twists, twists, twists)
def test_jacobi_identity(x, y, z):
    J = (
        bracket(x, bracket(y, z))
        + bracket(y, bracket(z, x))
        + bracket(z, bracket(x, y))
    )
    assert np.abs(J).max() < 1e-9


@given(twists)
def test_ad_is_derivative_of_adjoint(xi):
    h = 1e-6
    fd = (adjoint_of(exp_se3(xi, h)) - adjoint_of(exp_se3(xi, -h))) / (2 * h)
    np.testing.assert_allclose(fd, ad_of(xi), atol=1e-6 * max(1, np.abs(xi).max() ** 3))


@given(twists)
def test_pose_inverse_and_validity(xi):
    g = pose_of(xi)
    assert g.is_valid(1e-10)
    np.testing.assert_allclose((g @ g.inverse()).matrix(), np.eye(4), atol=1e-10)


def test_pose_invalid_rotation():
    assert not Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3)).is_valid()
    assert not Pose(2 * np.eye(3), np.zeros(3)).is_valid()


def test_pose_is_immutable():
    g = Pose.identity()
    with pytest.raises(ValueError):
        g.rotation[0, 0] = 2.0


def test_revolute_screw_fixes_its_axis():
    q = np.array([0.2, -0.1, 0.4])
    xi = revolute_screw((0, 0, 2), q)
    assert np.allclose(xi[3:], [0, 0, 1])
    g = exp_se3(xi, 1.3)
    np.testing.assert_allclose(g.act(q), q, atol=1e-14)
    np.testing.assert_allclose(g.act(q + [0, 0, 1]), q + [0, 0, 1], atol=1e-14)
    np.testing.assert_allclose(g.rotation, rot_z(1.3), atol=1e-14)


def test_exp_of_log_recovers_pose(rng):
    for _ in range(20):
        xi = rng.normal(size=6)
        xi[3:] *= 0.8
        T = exp_se3(xi).matrix()
        np.testing.assert_allclose(vee(np.real(logm(T))), xi, atol=1e-8)


@given(arrays(np.float64, 3, elements=st.floats(-5, 5)), arrays(np.float64, 3, elements=st.floats(-5, 5)))
def test_skew_is_cross_product(w, x):
    np.testing.assert_allclose(skew(w) @ x, np.cross(w, x), atol=1e-12)
    assert np.array_equal(unskew(skew(w)), w)


@given(st.floats(-3.1, 3.1), st.floats(-1.5, 1.5), st.floats(-3.1, 3.1))
def test_zyx_euler_round_trip(roll, pitch, yaw):
    def Rx(a):
        c, s = np.cos(a), np.sin(a)
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])

    def Ry(a):
        c, s = np.cos(a), np.sin(a)
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])

    R = rot_z(yaw) @ Ry(pitch) @ Rx(roll)
    r, p, y, g = zyx_euler(R)
    assert not g
    R2 = rot_z(y) @ Ry(p) @ Rx(r)
    np.testing.assert_allclose(R2, R, atol=1e-9)


def test_zyx_euler_flags_gimbal_lock():
    R = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])  # pitch = +90 deg
    roll, pitch, yaw, g = zyx_euler(R)
    assert g and pitch == pytest.approx(np.pi / 2)
