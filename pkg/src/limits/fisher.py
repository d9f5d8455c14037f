"""
Value types shared by the quantum and classical information paths: the source parameters,
3x3 Fisher matrices in the fixed order (s0, s, q), and the precisions derived from them.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from src.core.errors import DomainError, SingularFisherError

logger = logging.getLogger(__name__)

PARAMETER_ORDER = ("s0", "s", "q")
SINGULAR_RTOL = 1e-13


@dataclass(frozen=True)
class SourceParams:
    """theta = (s0, s, q): sources at s0 + s/2 (weight q) and s0 - s/2 (weight 1 - q)."""
    s0: float
    s: float
    q: float

    def __post_init__(self):
        if not all(np.isfinite(v) for v in (self.s0, self.s, self.q)):
            raise DomainError(f"PARAMS: non-finite parameters {self}")
        if self.s < 0:
            raise DomainError(f"PARAMS: separation must be non-negative, got {self.s}")
        if not 0.0 < self.q < 1.0:
            raise DomainError(f"PARAMS: relative intensity must lie in (0, 1), got {self.q}")

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "SourceParams":
        s0, s, q = (float(v) for v in values)
        return cls(s0=s0, s=s, q=q)

    def as_array(self) -> np.ndarray:
        return np.array([self.s0, self.s, self.q])

    def displacements(self, x0: float):
        """(a+, a-): offsets of the two components from the measurement displacement x0."""
        return self.s0 + 0.5 * self.s - x0, self.s0 - 0.5 * self.s - x0

    def reflected(self, x0: float) -> "SourceParams":
        """The mirror image about x0, which swaps the labels of the two components."""
        return SourceParams(s0=2.0 * x0 - self.s0, s=self.s, q=1.0 - self.q)

    def to_dict(self) -> dict:
        return {"s0": self.s0, "s": self.s, "q": self.q}


class FisherKind(str, Enum):
    QUANTUM = "quantum"
    CLASSICAL = "classical"


@dataclass(frozen=True)
class PrecisionTriple:
    """Per-event precisions H_alpha = 1 / (F^-1)_alpha,alpha."""
    H_s0: float
    H_s: float
    H_q: float
    condition_number: float = float("nan")

    def as_array(self) -> np.ndarray:
        return np.array([self.H_s0, self.H_s, self.H_q])

    def ratio_to(self, other: "PrecisionTriple") -> np.ndarray:
        return self.as_array() / other.as_array()

    def to_dict(self) -> dict:
        return {"H_s0": self.H_s0, "H_s": self.H_s, "H_q": self.H_q, "condition_number": self.condition_number}


@dataclass(frozen=True, eq=False)
class FisherMatrix:
    """
    Information per detection event about (s0, s, q).
    - unbounded: an outcome with vanishing probability but non-vanishing derivative was left out
    - diverging: some entry is infinite
    """
    matrix: np.ndarray
    kind: FisherKind
    method: str
    theta: Optional[SourceParams] = None
    psf: dict = field(default_factory=dict)
    unbounded: bool = False
    diverging: bool = False

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise DomainError(f"FISHER: expected a 3x3 matrix, got shape {m.shape}")
        # exactly symmetric from here on
        finite = np.all(np.isfinite(m))
        if finite:
            m = 0.5 * (m + m.T)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "diverging", self.diverging or not finite)

    @property
    def flagged(self) -> bool:
        return self.unbounded or self.diverging

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])

    def precisions(self) -> PrecisionTriple:
        return precisions_from_fisher(self)

    def covariance_bound(self, n_events: int = 1) -> np.ndarray:
        """F^-1 / n_events, the Cramer-Rao covariance bound for n independent events."""
        try:
            return np.linalg.inv(self.matrix) / n_events
        except np.linalg.LinAlgError as e:
            raise SingularFisherError(_null_direction(self.matrix), str(e)) from e

    def dominated_by(self, other: "FisherMatrix", tol: float = 1e-9) -> bool:
        """True when other - self is positive semidefinite within tol."""
        return float(np.linalg.eigvalsh(other.matrix - self.matrix)[0]) >= -tol

    def to_json_dict(self) -> dict:
        return {
            "order": list(PARAMETER_ORDER),
            "matrix": self.matrix.tolist(),
            "kind": self.kind.value,
            "method": self.method,
            "theta": None if self.theta is None else self.theta.to_dict(),
            "psf": self.psf,
            "unbounded": self.unbounded,
            "diverging": self.diverging,
        }


def _null_direction(matrix: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(matrix)):
        return np.full(3, np.nan)
    _, vectors = np.linalg.eigh(matrix)
    direction = vectors[:, 0]
    return direction * np.sign(direction[np.argmax(np.abs(direction))])


def precisions_from_fisher(fisher) -> PrecisionTriple:
    """
    H_alpha = 1 / (F^-1)_alpha,alpha, evaluated as the Schur complement
    F_aa - F[a, rest] F[rest, rest]^-1 F[rest, a] so tiny precisions keep their relative accuracy.
    """
    matrix = fisher.matrix if isinstance(fisher, FisherMatrix) else np.asarray(fisher, dtype=float)
    if not np.all(np.isfinite(matrix)):
        raise DomainError("FISHER: matrix has non-finite entries; precisions are undefined")

    precisions = []
    for alpha in range(3):
        rest = [i for i in range(3) if i != alpha]
        diagonal = matrix[alpha, alpha]
        if diagonal <= 0:
            raise SingularFisherError(_null_direction(matrix), f"Diagonal entry {PARAMETER_ORDER[alpha]} is {diagonal:.3e}.")
        try:
            reduced = np.linalg.solve(matrix[np.ix_(rest, rest)], matrix[rest, alpha])
        except np.linalg.LinAlgError as e:
            raise SingularFisherError(_null_direction(matrix), str(e)) from e
        schur = diagonal - matrix[alpha, rest] @ reduced
        if schur <= SINGULAR_RTOL * diagonal:
            raise SingularFisherError(
                _null_direction(matrix),
                f"No information on {PARAMETER_ORDER[alpha]} once the other parameters are free.",
            )
        precisions.append(float(schur))

    return PrecisionTriple(*precisions, condition_number=float(np.linalg.cond(matrix)))


def weighted_bound(fisher, cost) -> float:
    """Tr(C F^-1): the scalar bound on the cost-weighted mean squared error for a positive weight matrix C."""
    matrix = fisher.matrix if isinstance(fisher, FisherMatrix) else np.asarray(fisher, dtype=float)
    cost = np.asarray(cost, dtype=float)
    if cost.shape != (3, 3) or not np.allclose(cost, cost.T):
        raise DomainError("FISHER: cost matrix must be a symmetric 3x3 matrix")
    if np.linalg.eigvalsh(cost)[0] < -1e-12:
        raise DomainError("FISHER: cost matrix must be positive semidefinite")
    try:
        return float(np.trace(np.linalg.solve(matrix, cost)))
    except np.linalg.LinAlgError as e:
        raise SingularFisherError(_null_direction(matrix), str(e)) from e
