"""
Four-outcome measurements built from three vectors |pi_j> in span{Phi_0..Phi_3} plus the completion
Pi_3 = 1 - sum_j |pi_j><pi_j|, their validation and quality factor, outcome probabilities, and the
classical Fisher information per detected photon.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum, auto
from typing import List, Optional, Tuple

import numpy as np

from src.core.errors import DomainError, NumericalAccuracyError, UsageError
from src.limits.fisher import FisherKind, FisherMatrix, SourceParams
from src.modes.basis import OrthonormalBasis, displaced_state_coefficients, displaced_state_derivative

logger = logging.getLogger(__name__)

MODE_COUNT = 4
ROW_COUNT = 3
ZERO_TOL = 1e-12
PSD_TOL = 1e-10
ROW_ORTHONORMALITY_TOL = 1e-12
CONDITIONING_TOL = 1e-3
COMPLETION_TOL = 1e-12
PROBABILITY_FLOOR = 1e-14
DISPLACEMENT_TOL = 1e-12


class PovmFamily(str, Enum):
    PHI = "phi-family"
    CUSTOM = "custom"


@dataclass(frozen=True, eq=False)
class PovmSpec:
    """Rows of `coefficients` are <Phi_k|pi_j>, k = 0..3, for a measurement displaced to x0."""
    coefficients: np.ndarray
    x0: float
    family: PovmFamily = PovmFamily.CUSTOM
    phi: Optional[float] = None

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=float)
        if c.shape != (ROW_COUNT, MODE_COUNT):
            raise DomainError(f"POVM: coefficient matrix must be {ROW_COUNT}x{MODE_COUNT}, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise DomainError("POVM: coefficient matrix has non-finite entries")
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)
        object.__setattr__(self, "x0", float(self.x0))

    def completion(self) -> np.ndarray:
        """Pi_3 restricted to span{Phi_0..Phi_3}."""
        return np.eye(MODE_COUNT) - self.coefficients.T @ self.coefficients

    def to_dict(self) -> dict:
        return {
            "coefficients": self.coefficients.tolist(),
            "x0": self.x0,
            "family": self.family.value,
            "phi": self.phi,
        }


def build_phi_family(phi: float, x0: float = 0.0) -> PovmSpec:
    """
    The one-angle family of projective measurements, c = cos(phi), 0 < phi < pi/2:
        pi_0 = (0, sin(phi/2), +cos(phi/2), -sqrt(c)) / sqrt(1 + c)
        pi_1 = (0, sin(phi/2), -cos(phi/2), -sqrt(c)) / sqrt(1 + c)
        pi_2 = (sqrt(2c), sqrt(2c), 0, sqrt(1 - c)) / sqrt(1 + 3c)
    """
    phi = float(phi)
    if not 0.0 < phi < 0.5 * np.pi:
        raise DomainError(f"POVM: phi must lie in the open interval (0, pi/2), got {phi}")
    c = np.cos(phi)
    half_sin, half_cos = np.sin(0.5 * phi), np.cos(0.5 * phi)
    pair = np.sqrt(1.0 + c)
    centre = np.sqrt(1.0 + 3.0 * c)
    rows = np.array([
        [0.0, half_sin / pair, half_cos / pair, -np.sqrt(c) / pair],
        [0.0, half_sin / pair, -half_cos / pair, -np.sqrt(c) / pair],
        [np.sqrt(2.0 * c) / centre, np.sqrt(2.0 * c) / centre, 0.0, np.sqrt(1.0 - c) / centre],
    ])
    error = float(np.max(np.abs(rows @ rows.T - np.eye(ROW_COUNT))))
    if error > ROW_ORTHONORMALITY_TOL:
        raise NumericalAccuracyError(f"POVM: phi-family rows lost orthonormality ({error:.2e}) at phi={phi}")
    return PovmSpec(coefficients=rows, x0=x0, family=PovmFamily.PHI, phi=phi)


class ConditionClause(str, Enum):
    ROW_NORM = "row-norm"
    COMPLETION_PSD = "completion-psd"
    INDEPENDENCE = "linear-independence"
    CENTRE_FREE_PAIR = "two rows free of Phi_0 with a Phi_1 component"
    MIXED_ROW = "third row with Phi_0 and Phi_1 components"


class PovmVerdict(Enum):
    VALID = auto()
    VALID_WITH_WARNING = auto()
    CONDITION_FAILURE = auto()


@dataclass
class QualityReport:
    """
    Outcome of validate_povm. formula_quality is the quality-factor formula evaluated on the canonical
    row order; quality is the factor actually retained, which is zero whenever a condition fails.
    """
    verdict: PovmVerdict
    quality: float
    formula_quality: float
    permutation: Tuple[int, int, int]
    failed: List[ConditionClause] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    @property
    def satisfied(self) -> bool:
        return not self.failed

    def lambda_factor(self, q: float) -> float:
        return 4.0 * q * (1.0 - q) * self.quality

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.name,
            "quality": self.quality,
            "formula_quality": self.formula_quality,
            "permutation": list(self.permutation),
            "failed": [clause.value for clause in self.failed],
            "warnings": list(self.warnings),
        }


def canonical_row_order(coefficients: np.ndarray) -> Tuple[int, int, int]:
    """Rows free of Phi_0 first, then by descending |C_j1|; ties keep their original order."""
    free = np.abs(coefficients[:, 0]) <= ZERO_TOL
    order = sorted(range(ROW_COUNT), key=lambda j: (not free[j], -abs(coefficients[j, 1])))
    return tuple(order)


def _formula_quality(rows: np.ndarray) -> float:
    denominator = rows[0, 1] ** 2 + rows[1, 1] ** 2
    if denominator <= ZERO_TOL ** 2:
        return 0.0
    return float((rows[0, 1] * rows[1, 2] - rows[0, 2] * rows[1, 1]) ** 2 / denominator)


def validate_povm(spec: PovmSpec) -> QualityReport:
    """
    Checks, in order:
    - every row has norm at most 1
    - the completion Pi_3 is positive semidefinite
    - the three rows are linearly independent
    - exactly two rows are free of Phi_0 and carry a Phi_1 component
    - the remaining row carries both Phi_0 and Phi_1 components
    and computes the quality factor in the canonical row order.
    """
    c = spec.coefficients
    failed: List[ConditionClause] = []
    warnings: List[str] = []

    norms = np.linalg.norm(c, axis=1)
    if np.any(norms > 1.0 + PSD_TOL):
        failed.append(ConditionClause.ROW_NORM)
    if np.linalg.eigvalsh(spec.completion())[0] < -PSD_TOL:
        failed.append(ConditionClause.COMPLETION_PSD)
    singular_values = np.linalg.svd(c, compute_uv=False)
    if singular_values[-1] <= PSD_TOL * max(singular_values[0], 1.0):
        failed.append(ConditionClause.INDEPENDENCE)

    permutation = canonical_row_order(c)
    rows = c[list(permutation)]
    free = np.abs(rows[:, 0]) <= ZERO_TOL
    if not (free[0] and free[1] and abs(rows[0, 1]) > ZERO_TOL and abs(rows[1, 1]) > ZERO_TOL):
        failed.append(ConditionClause.CENTRE_FREE_PAIR)
    if free[2] or abs(rows[2, 1]) <= ZERO_TOL:
        failed.append(ConditionClause.MIXED_ROW)

    # entries the conditions require to be non-zero, flagged when they are close to vanishing
    required = [rows[0, 1], rows[1, 1], rows[2, 0], rows[2, 1]]
    if not failed and min(abs(v) for v in required) < CONDITIONING_TOL:
        warnings.append(
            f"POVM: a required coefficient is {min(abs(v) for v in required):.2e}, close to violating the "
            f"conditions; superresolution degrades"
        )

    formula = _formula_quality(rows)
    quality = 0.0 if failed else formula
    if quality <= ZERO_TOL:
        warnings.append("POVM: quality factor is zero; the measurement loses the small-separation advantage")

    if failed:
        verdict = PovmVerdict.CONDITION_FAILURE
        logger.warning(f"POVM: rejected, failed {[clause.value for clause in failed]}")
    elif warnings:
        verdict = PovmVerdict.VALID_WITH_WARNING
    else:
        verdict = PovmVerdict.VALID
    for message in warnings:
        logger.warning(message)

    return QualityReport(
        verdict=verdict,
        quality=quality,
        formula_quality=formula,
        permutation=permutation,
        failed=failed,
        warnings=warnings,
    )


def _check_alignment(spec: PovmSpec, basis: OrthonormalBasis) -> None:
    if abs(spec.x0 - basis.x0) > DISPLACEMENT_TOL * max(1.0, abs(basis.x0)):
        raise UsageError(f"POVM: measurement is displaced to {spec.x0} but the basis to {basis.x0}")


def _amplitudes(spec: PovmSpec, basis: OrthonormalBasis, theta: SourceParams, with_derivatives: bool):
    a_plus, a_minus = theta.displacements(basis.x0)
    plus = displaced_state_coefficients(basis, a_plus).coefficients[:MODE_COUNT]
    minus = displaced_state_coefficients(basis, a_minus).coefficients[:MODE_COUNT]
    amplitudes = (spec.coefficients @ plus, spec.coefficients @ minus)
    if not with_derivatives:
        return amplitudes, None
    d_plus = displaced_state_derivative(basis, a_plus)[:MODE_COUNT]
    d_minus = displaced_state_derivative(basis, a_minus)[:MODE_COUNT]
    return amplitudes, (spec.coefficients @ d_plus, spec.coefficients @ d_minus)


def _complete(partial: np.ndarray) -> np.ndarray:
    last = 1.0 - partial.sum()
    if last < -COMPLETION_TOL:
        raise NumericalAccuracyError(f"POVM: outcome probabilities sum to {1.0 - last:.15f} > 1")
    return np.append(partial, max(last, 0.0))


def outcome_probabilities(spec: PovmSpec, basis: OrthonormalBasis, theta: SourceParams) -> np.ndarray:
    """p_j = q <pi_j|Psi+>^2 + (1 - q) <pi_j|Psi->^2 for j < 3, and p_3 = 1 - sum."""
    _check_alignment(spec, basis)
    (plus, minus), _ = _amplitudes(spec, basis, theta, with_derivatives=False)
    return _complete(theta.q * plus ** 2 + (1.0 - theta.q) * minus ** 2)


def probability_gradients(spec: PovmSpec, basis: OrthonormalBasis, theta: SourceParams) -> Tuple[np.ndarray, np.ndarray]:
    """(p, dp) with dp[alpha, j] = d p_j / d theta_alpha in the order (s0, s, q)."""
    _check_alignment(spec, basis)
    (plus, minus), (d_plus, d_minus) = _amplitudes(spec, basis, theta, with_derivatives=True)
    q = theta.q
    bright = 2.0 * q * plus * d_plus
    dim = 2.0 * (1.0 - q) * minus * d_minus
    gradients = np.vstack([bright + dim, 0.5 * (bright - dim), plus ** 2 - minus ** 2])
    gradients = np.hstack([gradients, -gradients.sum(axis=1, keepdims=True)])
    return _complete(q * plus ** 2 + (1.0 - q) * minus ** 2), gradients


def classical_fim(spec: PovmSpec, basis: OrthonormalBasis, theta: SourceParams) -> FisherMatrix:
    """
    F_ab = sum_j (d_a p_j)(d_b p_j) / p_j. Outcomes with p_j and every derivative below 1e-14 add nothing;
    an outcome with p_j below 1e-14 but a finite derivative is left out and flags the result unbounded.
    """
    probabilities, gradients = probability_gradients(spec, basis, theta)
    matrix = np.zeros((3, 3))
    unbounded = False
    for j, p in enumerate(probabilities):
        g = gradients[:, j]
        if p < PROBABILITY_FLOOR:
            if np.max(np.abs(g)) >= PROBABILITY_FLOOR:
                unbounded = True
            continue
        matrix += np.outer(g, g) / p
    if unbounded:
        logger.warning(f"POVM: an outcome with vanishing probability carries information at {theta}")
    return FisherMatrix(
        matrix=matrix,
        kind=FisherKind.CLASSICAL,
        method=spec.family.value,
        theta=theta,
        psf=basis.model.descriptor(),
        unbounded=unbounded,
    )
