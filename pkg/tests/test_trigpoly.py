import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from mlrdyn.trigpoly import TrigBasis, TrigPoly

angles = arrays(np.float64, 3, elements=st.floats(-np.pi, np.pi))


def rand_linear(rng, n, k, shape=(2, 2)):
    return TrigPoly.joint(n, k, *(rng.normal(size=shape) for _ in range(3)))


@given(angles)
def test_products_and_sums_match_pointwise_values(theta):
    rng = np.random.default_rng(1)
    a, b, c = (rand_linear(rng, 3, k) for k in range(3))
    M = rng.normal(size=(2, 2))
    expr = (a @ b + c) @ M - 2.0 * (c.T @ a)
    ref = (a(theta) @ b(theta) + c(theta)) @ M - 2.0 * (c(theta).T @ a(theta))
    np.testing.assert_allclose(expr(theta), ref, atol=1e-12)
    np.testing.assert_allclose((M @ a)(theta), M @ a(theta), atol=1e-12)
    np.testing.assert_allclose((a * b)(theta), a(theta) * b(theta), atol=1e-12)
    np.testing.assert_allclose(a[0, 1](theta), a(theta)[0, 1])


def test_degree_limit_is_enforced(rng):
    a = rand_linear(rng, 2, 0)
    aa = a @ a
    assert aa.degree() == (2, 0)
    with pytest.raises(ValueError):
        aa @ a
    with pytest.raises(ValueError):
        TrigPoly(2, {((3, 0), (0, 0)): 1.0})


@given(angles, st.integers(0, 2))
def test_derivative_matches_finite_difference(theta, k):
    rng = np.random.default_rng(2)
    a, b, c = (rand_linear(rng, 3, j) for j in range(3))
    p = a @ b @ c @ a.T
    h = 1e-6
    e = np.zeros(3)
    e[k] = h
    ref = (p(theta + e) - p(theta - e)) / (2 * h)
    np.testing.assert_allclose(p.derivative(k)(theta), ref, atol=1e-7)


@given(angles)
def test_reduction_preserves_values_and_removes_sine_squares(theta):
    rng = np.random.default_rng(3)
    a, b = rand_linear(rng, 3, 1), rand_linear(rng, 3, 2)
    p = a @ a @ b @ b
    r = p.reduced()
    np.testing.assert_allclose(r(theta), p(theta), atol=1e-12)
    assert all(e != (2, 0) for key in r.terms for e in key)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_basis_sizes_and_rank(n, rng):
    full, red = TrigBasis(n), TrigBasis(n, reduced=True)
    assert full.size == 6**n and red.size == 5**n
    assert full.elements[0] == ((0, 0),) * n
    thetas = rng.uniform(-np.pi, np.pi, (2 * 6**n, n))
    Ff = np.array([full.evaluate(t) for t in thetas])
    Fr = np.array([red.evaluate(t) for t in thetas])
    # s^2 + c^2 = 1 makes the full product basis dependent; the reduced one is not
    assert np.linalg.matrix_rank(Fr) == 5**n
    assert np.linalg.matrix_rank(Ff) == 5**n


@pytest.mark.parametrize("reduced", [False, True])
def test_basis_evaluation_matches_elements(reduced, rng):
    B = TrigBasis(2, reduced=reduced)
    th = rng.uniform(-np.pi, np.pi, 2)
    F = B.evaluate(th)
    np.testing.assert_allclose(F, [B.element(q)(th) for q in range(B.size)], atol=1e-15)


@pytest.mark.parametrize("reduced", [False, True])
def test_derivative_table_matches_finite_difference(reduced, rng):
    B = TrigBasis(3, reduced=reduced)
    th = rng.uniform(-np.pi, np.pi, 3)
    h = 1e-6
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        ref = (B.evaluate(th + e) - B.evaluate(th - e)) / (2 * h)
        np.testing.assert_allclose(B.derivative_table(k) @ B.evaluate(th), ref, atol=1e-8)


def test_represent_round_trip(rng):
    B = TrigBasis(3, reduced=True)
    a, b, c = (rand_linear(rng, 3, k) for k in range(3))
    p = a @ b @ c @ c
    C = B.represent(p)
    th = rng.uniform(-np.pi, np.pi, 3)
    np.testing.assert_allclose(C @ B.evaluate(th), p(th), atol=1e-12)
    with pytest.raises(ValueError):
        TrigPoly(3, {((2, 0), (0, 0), (0, 0)): 1.0}).coefficients(B)


def test_stack_and_reshape(rng):
    a, b = rand_linear(rng, 2, 0, (3,)), rand_linear(rng, 2, 1, (3,))
    s = TrigPoly.stack([a, b], axis=1)
    th = rng.uniform(-1, 1, 2)
    np.testing.assert_allclose(s(th), np.stack([a(th), b(th)], axis=1))
    np.testing.assert_allclose(s.reshape(6)(th), s(th).reshape(6))
