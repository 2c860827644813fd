"""Tensor helpers."""

import numpy as np
import pytest

from smagfem.tensors import (AffineField3, continuity_gap, continuity_gaps, curl_advection_identity_residual,
                             frobenius_norm, matrix_cross, monotonicity_residual, monotonicity_residuals,
                             p_flux, tolerance)


def test_frobenius_norm():
    assert frobenius_norm(np.array([[3.0, 4.0], [0.0, 0.0]])) == pytest.approx(5.0)


def test_p_flux_is_degree_two_homogeneous(rng):
    G = rng.uniform(-1.0, 1.0, (2, 2))
    np.testing.assert_allclose(p_flux(3.0 * G), 9.0 * p_flux(G), rtol=1e-14)


def test_monotonicity_residual_identity_against_zero():
    X = np.eye(2)
    assert monotonicity_residual(X, np.zeros((2, 2))) == pytest.approx(3.0 * np.sqrt(2.0) ** 3)
    assert monotonicity_residual(X, X) == 0.0


@pytest.mark.parametrize("d", [2, 3])
def test_monotonicity_and_continuity_on_random_pairs(rng, d):
    X = rng.uniform(-1.0, 1.0, (1000, d, d))
    Z = rng.uniform(-1.0, 1.0, (1000, d, d))
    for x, z in zip(X[:50], Z[:50]):
        assert monotonicity_residual(x, z) >= -tolerance(x, z)
        assert continuity_gap(x, z) >= -tolerance(x, z)
    assert np.all(monotonicity_residuals(X, Z) >= -1e-12 * 8.0 ** 3)
    assert np.all(continuity_gaps(X, Z) >= -1e-12 * 8.0 ** 3)


def test_batched_residuals_match_scalar(rng):
    X = rng.normal(size=(5, 3, 3))
    Z = rng.normal(size=(5, 3, 3))
    np.testing.assert_allclose(monotonicity_residuals(X, Z),
                               [monotonicity_residual(x, z) for x, z in zip(X, Z)], rtol=1e-12)
    np.testing.assert_allclose(continuity_gaps(X, Z),
                               [continuity_gap(x, z) for x, z in zip(X, Z)], rtol=1e-10, atol=1e-14)


def test_continuity_gap_vanishes_against_zero(rng):
    X = rng.normal(size=(2, 2))
    assert abs(continuity_gap(X, np.zeros((2, 2)))) <= tolerance(X)


def test_shape_checks():
    with pytest.raises(ValueError):
        monotonicity_residual(np.eye(2), np.eye(3))
    with pytest.raises(ValueError):
        continuity_gap(np.eye(4), np.eye(4))
    with pytest.raises(ValueError):
        matrix_cross(np.eye(2), np.eye(2))


def test_matrix_cross_hand_evaluated():
    B = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    # c1 = e2.e1 - e3.e3, c2 = -(e1.e1 - e3.e2), c3 = e1.e3 - e2.e2
    np.testing.assert_array_equal(matrix_cross(np.eye(3), B), [-1.0, -1.0, -1.0])
    np.testing.assert_array_equal(matrix_cross(np.eye(3), np.eye(3)), np.zeros(3))


def test_matrix_cross_is_antisymmetric(rng):
    A = rng.normal(size=(3, 3))
    B = rng.normal(size=(3, 3))
    np.testing.assert_allclose(matrix_cross(A, B), -matrix_cross(B, A), atol=1e-14)
    np.testing.assert_allclose(matrix_cross(A, A), 0.0, atol=1e-14)


def test_curl_identity_on_affine_fields(rng):
    beta = AffineField3(np.zeros(3), np.diag([1.0, 0.0, 0.0]))
    v = AffineField3(np.zeros(3), np.array([[0, 0, 0], [0, 0, 0], [0, 1.0, 0]]))
    assert curl_advection_identity_residual(beta, v) == 0.0
    for _ in range(100):
        assert curl_advection_identity_residual(AffineField3.random(rng), AffineField3.random(rng)) <= 1e-12
