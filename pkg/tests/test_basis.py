import numpy as np
import pytest
from scipy.special import gammainc

from src.core.errors import CapabilityError, DomainError, TruncationError, UsageError
from src.modes.basis import (
    BasisMethod,
    basis_from_document,
    build_basis,
    displaced_state_coefficients,
    displaced_state_derivative,
    hermite_gauss_modes,
    taylor_state_coefficients,
)


def test_overlap_is_upper_triangular_with_positive_diagonal(basis):
    g = basis.overlap
    assert g[0, 0] == pytest.approx(1.0)
    np.testing.assert_array_equal(np.tril(g, -1), 0.0)
    assert np.all(np.diag(g) > 0)


def test_modes_are_signed_hermite_gauss(basis):
    x = np.linspace(-5, 5, 41)
    signs = (-1.0) ** np.arange(basis.dimension)
    np.testing.assert_allclose(basis.modes(x), signs[:, None] * hermite_gauss_modes(x, 0.0, 30), atol=1e-14)


def test_hermite_gauss_orthonormal(gaussian):
    rule = gaussian.quadrature_rule(center=0.7)
    modes = hermite_gauss_modes(rule.nodes, 0.7, 12)
    np.testing.assert_allclose((modes * rule.weights) @ modes.T, np.eye(12), atol=1e-12)


def test_gram_schmidt_reproduces_closed_form(gaussian):
    closed = build_basis(gaussian, 0.25, 6)
    numeric = build_basis(gaussian, 0.25, 6, BasisMethod.GRAM_SCHMIDT)
    assert numeric.method == BasisMethod.GRAM_SCHMIDT
    np.testing.assert_allclose(numeric.overlap, closed.overlap, rtol=1e-8, atol=1e-10)
    x = np.linspace(-4, 4, 33)
    np.testing.assert_allclose(numeric.modes(x), closed.modes(x), atol=1e-8)


def test_tabulated_basis_uses_gram_schmidt(tabulated):
    table_basis = build_basis(tabulated, 0.0, 5)
    assert table_basis.method == BasisMethod.GRAM_SCHMIDT
    assert table_basis.overlap[0, 0] == pytest.approx(1.0, rel=1e-8)


def test_dimension_limits(gaussian, tabulated):
    with pytest.raises(DomainError):
        build_basis(gaussian, 0.0, 3)
    with pytest.raises(CapabilityError):
        build_basis(tabulated, 0.0, 6)
    with pytest.raises(UsageError):
        build_basis(tabulated, 0.0, 4, BasisMethod.HERMITE_GAUSS)


def test_coherent_state_coefficients(basis):
    a = 0.3
    alpha = a / 2
    state = displaced_state_coefficients(basis, a)
    assert state.coefficients[0] == pytest.approx(np.exp(-alpha ** 2 / 2))
    assert state.coefficients[1] == pytest.approx(-alpha * np.exp(-alpha ** 2 / 2))
    assert state.residual == pytest.approx(gammainc(30, alpha ** 2))
    assert state.coefficients @ state.coefficients + state.residual == pytest.approx(1.0, abs=1e-14)


def test_quadrature_overlaps_match_closed_form(gaussian):
    closed = build_basis(gaussian, 0.0, 6)
    numeric = build_basis(gaussian, 0.0, 6, BasisMethod.GRAM_SCHMIDT)
    a = 0.2
    np.testing.assert_allclose(
        displaced_state_coefficients(numeric, a, limit=1e-3).coefficients,
        displaced_state_coefficients(closed, a, limit=1e-3).coefficients,
        atol=1e-9,
    )


def test_truncation_reported(gaussian):
    small = build_basis(gaussian, 0.0, 4)
    with pytest.raises(TruncationError) as info:
        displaced_state_coefficients(small, 3.0)
    assert info.value.dimension == 4
    assert info.value.residual > 0.1


def test_analytic_derivative_matches_difference(basis):
    a, h = 0.3, 1e-5
    numeric = (displaced_state_coefficients(basis, a + h).coefficients
               - displaced_state_coefficients(basis, a - h).coefficients) / (2 * h)
    np.testing.assert_allclose(displaced_state_derivative(basis, a), numeric, atol=1e-8)


def test_taylor_series_agrees_at_small_displacement(basis):
    a = 0.01
    exact = displaced_state_coefficients(basis, a).coefficients
    np.testing.assert_allclose(taylor_state_coefficients(basis, a, order=4), exact, atol=1e-10)


def test_basis_document_rebuilds(gaussian):
    original = build_basis(gaussian, -0.1, 8)
    rebuilt = basis_from_document(original.to_document(), gaussian)
    np.testing.assert_array_equal(rebuilt.overlap, original.overlap)
    assert rebuilt.x0 == -0.1
    assert rebuilt.method == BasisMethod.HERMITE_GAUSS


def test_basis_document_rejects_other_psf(gaussian):
    from src.core.psf import gaussian_psf

    document = build_basis(gaussian, 0.0, 8).to_document()
    with pytest.raises(UsageError):
        basis_from_document(document, gaussian_psf(2.0))
