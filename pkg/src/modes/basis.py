"""
Displaced orthonormal mode basis {Phi_n} obtained by orthonormalizing the PSF derivatives
Psi_m(x) = d^m Psi(x - x0) / dx^m, and expansions of displaced signal states in it.

G_nm = <Phi_n|Psi_m> is upper triangular with a positive diagonal. For the Gaussian PSF the
orthonormalization has the closed form Phi_n = (-1)^n HG_n, with HG_n the displaced Hermite-Gauss
functions; any other PSF goes through modified Gram-Schmidt on quadrature samples.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from math import factorial
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field
from scipy.linalg import solve_triangular
from scipy.special import gammainc

from src.core.errors import CapabilityError, DomainError, RankDeficiencyError, TruncationError, UsageError
from src.core.psf import PsfKind, PsfModel, richardson_derivative
from src.core.quadrature import QuadratureRule, check_refinement

logger = logging.getLogger(__name__)

DEFAULT_DIMENSION = 30
MIN_DIMENSION = 4
ORTHONORMALITY_TOL = 1e-9
RANK_TOL = 1e-8
TRUNCATION_LIMIT = 1e-6
OVERLAP_RTOL = 1e-10


class BasisMethod(str, Enum):
    HERMITE_GAUSS = "hermite-gauss"
    GRAM_SCHMIDT = "gram-schmidt"


def hermite_gauss_modes(x, x0: float, dimension: int, sigma: float = 1.0) -> np.ndarray:
    """
    Displaced Hermite-Gauss functions HG_n(x - x0), n < dimension, as rows of a (dimension, len(x)) array.
    HG_n = HG_0(u) He_n(u) / sqrt(n!) with u = (x - x0) / sigma and HG_0 the unit-norm Gaussian amplitude.
    """
    u = (np.atleast_1d(np.asarray(x, dtype=float)) - x0) / sigma
    modes = np.empty((dimension, u.size))
    modes[0] = (2.0 * np.pi * sigma ** 2) ** -0.25 * np.exp(-u ** 2 / 4.0)
    if dimension > 1:
        modes[1] = u * modes[0]
    for n in range(1, dimension - 1):
        modes[n + 1] = (u * modes[n] - np.sqrt(n) * modes[n - 1]) / np.sqrt(n + 1)
    return modes


def _derivative_operator(size: int, sigma: float) -> np.ndarray:
    """d/dx acting on Hermite-Gauss coefficient vectors (tridiagonal, antisymmetric)."""
    k = np.arange(1, size)
    op = np.zeros((size, size))
    op[k - 1, k] = np.sqrt(k) / (2.0 * sigma)
    op[k, k - 1] = -np.sqrt(k) / (2.0 * sigma)
    return op


def _hermite_gauss_overlap(dimension: int, sigma: float) -> np.ndarray:
    op = _derivative_operator(2 * dimension, sigma)
    column = np.zeros(2 * dimension)
    column[0] = 1.0
    overlap = np.zeros((dimension, dimension))
    signs = (-1.0) ** np.arange(dimension)
    for m in range(dimension):
        overlap[:, m] = signs * column[:dimension]
        column = op @ column
    return np.triu(overlap)


@dataclass(frozen=True, eq=False)
class OrthonormalBasis:
    """
    The modes Phi_0..Phi_{N-1} displaced to x0 and their overlap matrix G with the PSF derivatives.
    For Gram-Schmidt bases `transform` holds T with Phi_n = sum_m T_nm Psi_m.
    """
    model: PsfModel
    x0: float
    dimension: int
    overlap: np.ndarray
    method: BasisMethod
    transform: Optional[np.ndarray] = None

    def modes(self, x) -> np.ndarray:
        """Phi_n(x) for every n, shape (dimension, len(x))."""
        if self.method == BasisMethod.HERMITE_GAUSS:
            signs = (-1.0) ** np.arange(self.dimension)
            return signs[:, None] * hermite_gauss_modes(x, self.x0, self.dimension, self.model.sigma)
        shifted = np.atleast_1d(np.asarray(x, dtype=float)) - self.x0
        return self.transform @ _derivative_samples(self.model, shifted, self.dimension)

    def quadrature_rule(self, shift: float = 0.0) -> QuadratureRule:
        """A rule covering the modes and a PSF copy displaced from x0 by `shift`."""
        return self.model.quadrature_rule(center=self.x0 + 0.5 * shift, reach=0.5 * abs(shift))

    def to_document(self) -> "BasisDocument":
        return BasisDocument(
            x0=self.x0,
            dimension=self.dimension,
            method=self.method,
            overlap=self.overlap.tolist(),
            transform=None if self.transform is None else self.transform.tolist(),
            psf=self.model.descriptor(),
        )


class BasisDocument(BaseModel):
    """Serializable form of an OrthonormalBasis, for caching builds."""
    x0: float
    dimension: int = Field(ge=MIN_DIMENSION)
    method: BasisMethod
    overlap: List[List[float]]
    transform: Optional[List[List[float]]] = None
    psf: dict


def basis_from_document(document: BasisDocument, model: PsfModel) -> OrthonormalBasis:
    if document.psf.get("kind") != model.kind.value or not np.isclose(document.psf.get("sigma", np.nan), model.sigma):
        raise UsageError(f"BASIS: cached basis was built for PSF {document.psf}, not {model.descriptor()}")
    if document.method == BasisMethod.GRAM_SCHMIDT and document.transform is None:
        raise UsageError("BASIS: a Gram-Schmidt basis document needs its transform")
    overlap = np.asarray(document.overlap, dtype=float)
    if overlap.shape != (document.dimension, document.dimension):
        raise UsageError(f"BASIS: overlap matrix has shape {overlap.shape}, expected N={document.dimension}")
    return OrthonormalBasis(
        model=model,
        x0=document.x0,
        dimension=document.dimension,
        overlap=overlap,
        method=document.method,
        transform=None if document.transform is None else np.asarray(document.transform, dtype=float),
    )


def _derivative_samples(model: PsfModel, x: np.ndarray, count: int) -> np.ndarray:
    return np.vstack([model.amplitude(x, m) for m in range(count)])


def _gram_schmidt(model: PsfModel, x0: float, dimension: int):
    """
    Modified Gram-Schmidt with one reorthogonalization pass on weighted, norm-prescaled samples.
    Returns (G, T).
    """
    rule = model.quadrature_rule(center=x0)
    root_w = np.sqrt(rule.weights)
    vectors = _derivative_samples(model, rule.nodes - x0, dimension) * root_w
    norms = np.linalg.norm(vectors, axis=1)
    if np.any(norms == 0):
        raise RankDeficiencyError(int(np.argmin(norms)), 0.0)
    vectors = vectors / norms[:, None]

    q = np.zeros_like(vectors)
    r = np.zeros((dimension, dimension))
    for m in range(dimension):
        v = vectors[m].copy()
        for _ in range(2):
            for k in range(m):
                proj = q[k] @ v
                r[k, m] += proj
                v -= proj * q[k]
        residual = float(np.linalg.norm(v))
        if residual < RANK_TOL:
            raise RankDeficiencyError(m, residual)
        r[m, m] = residual
        q[m] = v / residual

    loss = np.abs(q @ q.T - np.eye(dimension))
    if loss.max() > ORTHONORMALITY_TOL:
        worst = int(np.unravel_index(np.argmax(loss), loss.shape)[0])
        raise RankDeficiencyError(worst, float(loss.max()))

    overlap = r * norms[None, :]
    transform = solve_triangular(r, np.diag(1.0 / norms), trans="T", lower=False)
    return overlap, transform


def _check_orthonormal(basis: OrthonormalBasis) -> None:
    rule = basis.quadrature_rule()
    modes = basis.modes(rule.nodes)
    gram = (modes * rule.weights) @ modes.T
    error = float(np.max(np.abs(gram - np.eye(basis.dimension))))
    if error > ORTHONORMALITY_TOL:
        raise RankDeficiencyError(basis.dimension - 1, error)


@lru_cache(maxsize=256)
def build_basis(
    model: PsfModel,
    x0: float = 0.0,
    dimension: int = DEFAULT_DIMENSION,
    method: Optional[BasisMethod] = None,
) -> OrthonormalBasis:
    """
    Orthonormalize Psi_0..Psi_{N-1} displaced to x0. The Gaussian PSF uses the Hermite-Gauss closed
    form unless method=GRAM_SCHMIDT is requested; tabulated PSFs always use Gram-Schmidt.
    """
    if dimension < MIN_DIMENSION:
        raise DomainError(f"BASIS: dimension must be at least {MIN_DIMENSION}, got {dimension}")
    if dimension - 1 > model.max_order:
        raise CapabilityError(
            f"BASIS: N={dimension} needs derivatives of order {dimension - 1}; "
            f"the {model.kind.value} PSF supports at most {model.max_order}"
        )
    if method is None:
        method = BasisMethod.HERMITE_GAUSS if model.kind == PsfKind.GAUSSIAN else BasisMethod.GRAM_SCHMIDT
    if method == BasisMethod.HERMITE_GAUSS and model.kind != PsfKind.GAUSSIAN:
        raise UsageError("BASIS: the Hermite-Gauss closed form only applies to the Gaussian PSF")

    x0 = float(x0)
    if method == BasisMethod.HERMITE_GAUSS:
        basis = OrthonormalBasis(model, x0, dimension, _hermite_gauss_overlap(dimension, model.sigma), method)
    else:
        overlap, transform = _gram_schmidt(model, x0, dimension)
        basis = OrthonormalBasis(model, x0, dimension, overlap, method, transform)
    _check_orthonormal(basis)
    logger.debug(f"BASIS: built {dimension} {method.value} modes at x0={x0:.6g}")
    return basis


@dataclass(frozen=True)
class StateCoefficients:
    """c_n = <Phi_n|Psi(. - x0 - a)> and the weight 1 - sum c_n^2 left outside the basis."""
    displacement: float
    coefficients: np.ndarray
    residual: float


def _hermite_gauss_amplitudes(alpha: float, count: int) -> np.ndarray:
    t = np.empty(count)
    t[0] = 1.0
    for n in range(1, count):
        t[n] = t[n - 1] * alpha / np.sqrt(n)
    return t


def _quadrature_coefficients(basis: OrthonormalBasis, a: float) -> np.ndarray:
    def project(rule: QuadratureRule) -> np.ndarray:
        signal = basis.model.amplitude(rule.nodes - basis.x0 - a)
        return basis.modes(rule.nodes) @ (rule.weights * signal)

    rule = basis.quadrature_rule(a)
    coarse, fine = project(rule), project(rule.refined())
    check_refinement(coarse, fine, 1.0, "displaced-state overlap", OVERLAP_RTOL)
    return fine


def displaced_state_coefficients(
    basis: OrthonormalBasis, a: float, limit: float = TRUNCATION_LIMIT
) -> StateCoefficients:
    """
    Exact overlaps of Psi(. - x0 - a) with each Phi_n. The Gaussian uses the coherent-state sequence
    c_n = (-1)^n e^{-alpha^2/2} alpha^n / sqrt(n!), alpha = a / (2 sigma), whose truncation residual is
    the regularized incomplete gamma function P(N, alpha^2).
    """
    a = float(a)
    if basis.method == BasisMethod.HERMITE_GAUSS:
        alpha = a / (2.0 * basis.model.sigma)
        signs = (-1.0) ** np.arange(basis.dimension)
        coefficients = signs * np.exp(-0.5 * alpha ** 2) * _hermite_gauss_amplitudes(alpha, basis.dimension)
        residual = float(gammainc(basis.dimension, alpha ** 2))
    else:
        coefficients = _quadrature_coefficients(basis, a)
        residual = max(0.0, 1.0 - float(coefficients @ coefficients))
    if residual > limit:
        raise TruncationError(residual, basis.dimension, limit)
    return StateCoefficients(displacement=a, coefficients=coefficients, residual=residual)


def displaced_state_derivative(basis: OrthonormalBasis, a: float, limit: float = TRUNCATION_LIMIT) -> np.ndarray:
    """dc/da; analytic for the Gaussian, Richardson central differences otherwise."""
    a = float(a)
    if basis.method == BasisMethod.HERMITE_GAUSS:
        sigma = basis.model.sigma
        alpha = a / (2.0 * sigma)
        t = _hermite_gauss_amplitudes(alpha, basis.dimension + 1)
        n = np.arange(basis.dimension)
        lower = np.concatenate(([0.0], t[:basis.dimension - 1]))
        derivative = np.sqrt(n) * lower - np.sqrt(n + 1) * t[1:]
        residual = float(gammainc(basis.dimension, alpha ** 2))
        if residual > limit:
            raise TruncationError(residual, basis.dimension, limit)
        return (-1.0) ** n * np.exp(-0.5 * alpha ** 2) * derivative / (2.0 * sigma)

    step = max(1e-6, 1e-3 * abs(a))
    return richardson_derivative(
        lambda shift: displaced_state_coefficients(basis, shift, limit).coefficients, a, 1, step
    )


def taylor_state_coefficients(basis: OrthonormalBasis, a: float, order: int = 4) -> np.ndarray:
    """Truncated series sum_m (-a)^m / m! G[:, m], the small-displacement expansion of the signal."""
    if order >= basis.dimension:
        raise CapabilityError(f"BASIS: Taylor order {order} needs N > {order}, have N={basis.dimension}")
    weights = np.array([(-a) ** m / factorial(m) for m in range(order + 1)])
    return basis.overlap[:, :order + 1] @ weights
