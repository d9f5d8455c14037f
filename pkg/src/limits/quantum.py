"""
Quantum Fisher information for two incoherent sources, by two independent routes:
- closed form from the PSF moments (qfim_closed)
- symmetric logarithmic derivatives of the truncated density matrix (qfim_numeric)
"""
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from src.core.errors import DomainError, NumericalAccuracyError
from src.core.psf import PsfModel, compute_moments, shift_residual
from src.limits.fisher import FisherKind, FisherMatrix, PrecisionTriple, SourceParams, precisions_from_fisher
from src.modes.basis import OrthonormalBasis, displaced_state_coefficients, displaced_state_derivative

logger = logging.getLogger(__name__)

SLD_EPSILON = 1e-12
DENSITY_TRUNCATION = 1e-8
TRACE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """rho = q c+ c+^T + (1 - q) c- c-^T in the basis; c+ and c- are the component coefficient vectors."""
    matrix: np.ndarray
    plus: np.ndarray
    minus: np.ndarray
    theta: SourceParams
    basis: OrthonormalBasis

    @property
    def trace_defect(self) -> float:
        return float(abs(np.trace(self.matrix) - 1.0))

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)


def _components(basis: OrthonormalBasis, theta: SourceParams) -> Tuple[np.ndarray, np.ndarray]:
    a_plus, a_minus = theta.displacements(basis.x0)
    plus = displaced_state_coefficients(basis, a_plus, DENSITY_TRUNCATION).coefficients
    minus = displaced_state_coefficients(basis, a_minus, DENSITY_TRUNCATION).coefficients
    return plus, minus


def density_matrix(basis: OrthonormalBasis, theta: SourceParams) -> DensityMatrix:
    plus, minus = _components(basis, theta)
    rho = theta.q * np.outer(plus, plus) + (1.0 - theta.q) * np.outer(minus, minus)
    state = DensityMatrix(matrix=rho, plus=plus, minus=minus, theta=theta, basis=basis)
    if state.trace_defect > TRACE_TOL:
        logger.warning(f"SLD: density matrix trace is off by {state.trace_defect:.2e} at {theta}")
    return state


def _symmetric_outer(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.outer(u, v) + np.outer(v, u)


def parameter_derivatives(basis: OrthonormalBasis, theta: SourceParams) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(d rho/d s0, d rho/d s, d rho/d q), using da+/ds0 = da-/ds0 = 1 and da+/ds = -da-/ds = 1/2."""
    plus, minus = _components(basis, theta)
    a_plus, a_minus = theta.displacements(basis.x0)
    d_plus = displaced_state_derivative(basis, a_plus, DENSITY_TRUNCATION)
    d_minus = displaced_state_derivative(basis, a_minus, DENSITY_TRUNCATION)

    plus_term = theta.q * _symmetric_outer(d_plus, plus)
    minus_term = (1.0 - theta.q) * _symmetric_outer(d_minus, minus)
    d_centroid = plus_term + minus_term
    d_separation = 0.5 * (plus_term - minus_term)
    d_intensity = np.outer(plus, plus) - np.outer(minus, minus)
    return d_centroid, d_separation, d_intensity


def solve_sld(rho, d_rho: np.ndarray, epsilon: float = SLD_EPSILON) -> np.ndarray:
    """
    Symmetric L with (L rho + rho L) / 2 = d_rho, solved in the eigenbasis of rho:
    L_ij = 2 d_rho_ij / (lambda_i + lambda_j) where lambda_i + lambda_j > epsilon * lambda_max, else 0.
    """
    matrix = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=float)
    eigenvalues, vectors = np.linalg.eigh(matrix)
    rotated = vectors.T @ d_rho @ vectors
    denominators = eigenvalues[:, None] + eigenvalues[None, :]
    support = denominators > epsilon * max(eigenvalues[-1], np.finfo(float).tiny)
    sld = np.zeros_like(rotated)
    sld[support] = 2.0 * rotated[support] / denominators[support]
    return vectors @ sld @ vectors.T


def _slds(basis: OrthonormalBasis, theta: SourceParams):
    rho = density_matrix(basis, theta)
    return rho, [solve_sld(rho, d) for d in parameter_derivatives(basis, theta)]


def qfim_numeric(basis: OrthonormalBasis, theta: SourceParams) -> FisherMatrix:
    """Q_ab = Tr(rho {L_a, L_b}) / 2 from the SLDs of the truncated density matrix."""
    rho, slds = _slds(basis, theta)
    q = np.empty((3, 3))
    for a in range(3):
        for b in range(a, 3):
            product = rho.matrix @ slds[a] @ slds[b]
            q[a, b] = q[b, a] = 0.5 * (np.trace(product) + np.trace(product.T))
    logger.debug(f"SLD: numeric qFIM at {theta} with N={basis.dimension}")
    return FisherMatrix(matrix=q, kind=FisherKind.QUANTUM, method="sld", theta=theta, psf=basis.model.descriptor())


def compatibility_residual(basis: OrthonormalBasis, theta: SourceParams) -> np.ndarray:
    """R_ab = Tr(rho [L_a, L_b]); the quantum bound is attainable when every entry vanishes."""
    rho, slds = _slds(basis, theta)
    residual = np.zeros((3, 3))
    for a in range(3):
        for b in range(3):
            residual[a, b] = np.trace(rho.matrix @ (slds[a] @ slds[b] - slds[b] @ slds[a]))
    return residual


def qfim_closed(model: PsfModel, theta: SourceParams) -> FisherMatrix:
    """
    Closed-form qFIM from p^2, w(s) and Im p(s). With m = Im p:
        Q = [[4 (p^2 - 4q(1-q) m^2), 4 (q - 1/2) p^2, 4 w m],
             [4 (q - 1/2) p^2,       p^2,             0      ],
             [4 w m,                 0,               (1 - w^2) / (q (1 - q))]]
    """
    moments = compute_moments(model, theta.s)
    q = theta.q
    p2, w, m = moments.p_squared, moments.w, moments.p_imag
    balance = 4.0 * q * (1.0 - q)
    with np.errstate(divide="ignore"):
        intensity_entry = moments.one_minus_w_squared / (q * (1.0 - q))
    matrix = np.array([
        [4.0 * (p2 - balance * m ** 2), 4.0 * (q - 0.5) * p2, 4.0 * w * m],
        [4.0 * (q - 0.5) * p2, p2, 0.0],
        [4.0 * w * m, 0.0, intensity_entry],
    ])
    fisher = FisherMatrix(matrix=matrix, kind=FisherKind.QUANTUM, method="closed-form", theta=theta, psf=model.descriptor())
    if fisher.diverging:
        logger.warning(f"SLD: intensity entry of the qFIM diverges at {theta}")
    return fisher


def quantum_precisions(model: PsfModel, theta: SourceParams) -> PrecisionTriple:
    """
    Precisions H_a = 1 / (Q^-1)_aa of the closed-form qFIM, in closed form.

    With B = 4q(1-q), p = <P^2>, m = p_imag and g = p (1 - w^2) - m^2:
        H_s0 = 4 B g / (1 - w^2),  H_s = B p g / (g + (1 - B) m^2),  H_q = 4 g / (B (p - m^2)).
    g vanishes like s^4, so it is taken from shift_residual rather than from the difference.
    """
    closed = qfim_closed(model, theta)
    moments = compute_moments(model, theta.s)
    try:
        gram = moments.p_squared * shift_residual(model, theta.s)
    except NumericalAccuracyError as exc:
        logger.warning(f"SLD: {exc}; inverting the closed-form qFIM instead")
        return precisions_from_fisher(closed)
    spread = moments.one_minus_w_squared
    balance = 4.0 * theta.q * (1.0 - theta.q)
    if not (gram > 0.0 and spread > 0.0 and balance > 0.0):
        # singular; the matrix route names the null direction
        return precisions_from_fisher(closed)
    p, m2 = moments.p_squared, moments.p_imag ** 2
    return PrecisionTriple(
        H_s0=4.0 * balance * gram / spread,
        H_s=balance * p * gram / (gram + (1.0 - balance) * m2),
        H_q=4.0 * gram / (balance * (p - m2)),
        condition_number=float(np.linalg.cond(closed.matrix)),
    )


def small_separation_approx(model: PsfModel, theta: SourceParams) -> PrecisionTriple:
    """
    Leading small-s precisions for unbalanced sources, with V = Var(P^2) and B = 4q(1-q):
        H_s0 = B V s^2,  H_s = B V s^2 / (4 (1 - B)),  H_q = V s^4 / B.
    """
    if theta.q == 0.5:
        raise DomainError("SLD: the small-separation expansion degenerates at q = 1/2; invert the qFIM instead")
    variance = compute_moments(model, 0.0).var_p_squared
    balance = 4.0 * theta.q * (1.0 - theta.q)
    s2 = theta.s ** 2
    return PrecisionTriple(
        H_s0=balance * variance * s2,
        H_s=balance * variance * s2 / (4.0 * (1.0 - balance)),
        H_q=variance * s2 ** 2 / balance,
    )
