import numpy as np
import pytest
from scipy.special import gammainc

from src.core.errors import DomainError, SingularFisherError
from src.core.psf import shift_residual
from src.limits.fisher import SourceParams, precisions_from_fisher
from src.limits.quantum import (
    compatibility_residual,
    density_matrix,
    qfim_closed,
    qfim_numeric,
    quantum_precisions,
    small_separation_approx,
    solve_sld,
)
from src.modes.basis import build_basis

GRID = [(s, q) for s in (0.01, 0.03, 0.1, 0.3, 1.0) for q in (0.1, 0.3, 0.5)]


@pytest.mark.parametrize("s, q", GRID)
def test_numeric_and_closed_form_agree(gaussian, basis, s, q):
    theta = SourceParams(0.0, s, q)
    closed = qfim_closed(gaussian, theta).matrix
    numeric = qfim_numeric(basis, theta).matrix
    assert np.linalg.norm(numeric - closed) / np.linalg.norm(closed) < 1e-6


@pytest.mark.parametrize("s, q", GRID)
def test_measurements_are_compatible(basis, s, q):
    assert np.max(np.abs(compatibility_residual(basis, SourceParams(0.0, s, q)))) < 1e-8


def test_numeric_path_independent_of_displacement(gaussian):
    theta = SourceParams(0.05, 0.2, 0.3)
    shifted = build_basis(gaussian, 0.3, 30)
    np.testing.assert_allclose(
        qfim_numeric(shifted, theta).matrix, qfim_closed(gaussian, theta).matrix, rtol=1e-6, atol=1e-9
    )


def test_balanced_sources_decouple_centroid_and_separation(gaussian):
    matrix = qfim_closed(gaussian, SourceParams(0.0, 0.1, 0.5)).matrix
    assert matrix[0, 1] == 0.0
    assert matrix[1, 1] == pytest.approx(0.25)


def test_closed_form_entries(gaussian):
    s, q = 0.4, 0.3
    w = np.exp(-s ** 2 / 8)
    m = s * w / 4
    matrix = qfim_closed(gaussian, SourceParams(0.0, s, q)).matrix
    assert matrix[0, 0] == pytest.approx(4 * (0.25 - 4 * q * (1 - q) * m ** 2), rel=1e-10)
    assert matrix[0, 1] == pytest.approx(4 * (q - 0.5) * 0.25, rel=1e-12)
    assert matrix[0, 2] == pytest.approx(4 * w * m, rel=1e-9)
    assert matrix[2, 2] == pytest.approx((1 - w ** 2) / (q * (1 - q)), rel=1e-8)


def test_density_matrix_is_a_state(basis, theta):
    rho = density_matrix(basis, theta)
    assert rho.trace_defect < 1e-10
    eigenvalues = rho.eigenvalues()
    assert eigenvalues.min() > -1e-14
    assert np.count_nonzero(eigenvalues > 1e-12) == 2


def test_sld_solves_lyapunov_equation():
    rho = np.diag([0.6, 0.3, 0.1])
    d_rho = np.array([[0.1, 0.2, 0.0], [0.2, -0.05, 0.1], [0.0, 0.1, -0.05]])
    sld = solve_sld(rho, d_rho)
    np.testing.assert_allclose(0.5 * (sld @ rho + rho @ sld), d_rho, atol=1e-14)


def _slope(xs, ys):
    return np.polyfit(np.log(xs), np.log(ys), 1)[0]


def test_small_separation_scaling(gaussian):
    separations = np.geomspace(1e-3, 1e-2, 5)
    triples = [quantum_precisions(gaussian, SourceParams(0.0, s, 0.3)) for s in separations]
    assert _slope(separations, [t.H_s0 for t in triples]) == pytest.approx(2.0, abs=0.05)
    assert _slope(separations, [t.H_s for t in triples]) == pytest.approx(2.0, abs=0.05)
    assert _slope(separations, [t.H_q for t in triples]) == pytest.approx(4.0, abs=0.05)
    balance = 4 * 0.3 * 0.7
    assert triples[0].H_s0 / triples[0].H_s == pytest.approx(4 * (1 - balance), rel=0.01)


@pytest.mark.parametrize("q", [0.1, 0.3])
def test_small_separation_expansion_matches_inversion(gaussian, q):
    theta = SourceParams(0.0, 1e-3, q)
    exact = quantum_precisions(gaussian, theta).as_array()
    approx = small_separation_approx(gaussian, theta).as_array()
    np.testing.assert_allclose(approx, exact, rtol=1e-3)


def test_small_separation_expansion_rejects_balanced_sources(gaussian):
    with pytest.raises(DomainError):
        small_separation_approx(gaussian, SourceParams(0.0, 0.01, 0.5))


@pytest.mark.parametrize("s", [1e-4, 1e-2, 0.5, 3.0])
def test_shift_residual_matches_gaussian_closed_form(gaussian, s):
    # p (1 - w^2) - m^2 = P(2, s^2/4) / 4 for the Gaussian
    assert shift_residual(gaussian, s) == pytest.approx(gammainc(2, s ** 2 / 4), rel=1e-7)


def test_shift_residual_vanishes_at_zero_separation(gaussian):
    assert shift_residual(gaussian, 0.0) == 0.0


@pytest.mark.parametrize("s", [0.3, 1.0, 2.5])
@pytest.mark.parametrize("q", [0.1, 0.3, 0.5])
def test_analytic_precisions_match_matrix_inversion(gaussian, s, q):
    theta = SourceParams(0.0, s, q)
    inverted = precisions_from_fisher(qfim_closed(gaussian, theta)).as_array()
    np.testing.assert_allclose(quantum_precisions(gaussian, theta).as_array(), inverted, rtol=1e-8)


def test_analytic_precisions_match_sld_route(gaussian, basis):
    theta = SourceParams(0.0, 1.0, 0.3)
    numeric = precisions_from_fisher(qfim_numeric(basis, theta)).as_array()
    np.testing.assert_allclose(quantum_precisions(gaussian, theta).as_array(), numeric, rtol=1e-4)


@pytest.mark.parametrize("s", [1e-4, 1e-5])
def test_analytic_precisions_stay_accurate_at_tiny_separation(gaussian, s):
    theta = SourceParams(0.0, s, 0.3)
    exact = quantum_precisions(gaussian, theta).as_array()
    approx = small_separation_approx(gaussian, theta).as_array()
    np.testing.assert_allclose(exact, approx, rtol=1e-6)


def test_balanced_separation_precision_is_p_squared(gaussian):
    assert quantum_precisions(gaussian, SourceParams(0.0, 1e-4, 0.5)).H_s == pytest.approx(0.25, rel=1e-12)


def test_coincident_sources_have_no_quantum_precision(gaussian):
    with pytest.raises(SingularFisherError):
        quantum_precisions(gaussian, SourceParams(0.0, 0.0, 0.3))
