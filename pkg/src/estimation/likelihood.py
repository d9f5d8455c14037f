"""
Maximum-likelihood estimation of (s0, s, q) from outcome counts.

The search runs Nelder-Mead in unconstrained coordinates (s0, v, u) with
    s = s_max * expit(v),    q = eps + (1 - 2 eps) * expit(u),
and minimizes the Kullback-Leibler divergence of the model from the observed frequencies, which has the
same optimum as the log-likelihood but stays well resolved near it.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logit

from src.core.errors import DegenerateDataError, DomainError, NumericalAccuracyError, TruncationError
from src.estimation.sampling import OutcomeCounts
from src.limits.fisher import SourceParams
from src.measurement.povm import PovmSpec, outcome_probabilities
from src.modes.basis import OrthonormalBasis

logger = logging.getLogger(__name__)

Q_CLAMP = 1e-6
DEFAULT_S_MAX = 2.0
DEFAULT_RESTARTS = 2
XATOL = 1e-10
FATOL = 1e-12
MAX_ITERATIONS = 4000
EQUIVALENCE_RTOL = 1e-9

ProbabilityModel = Callable[[SourceParams], np.ndarray]


@dataclass(frozen=True)
class EstimationResult:
    theta: SourceParams
    log_likelihood: float
    converged: bool
    iterations: int
    evaluations: int = 0
    canonicalized: bool = False
    flags: Tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "theta": self.theta.to_dict(),
            "log_likelihood": self.log_likelihood,
            "converged": self.converged,
            "iterations": self.iterations,
            "evaluations": self.evaluations,
            "canonicalized": self.canonicalized,
            "flags": list(self.flags),
        }


@dataclass(frozen=True)
class ParameterTransform:
    s_max: float = DEFAULT_S_MAX
    eps: float = Q_CLAMP

    def to_params(self, z: np.ndarray) -> SourceParams:
        return SourceParams(
            s0=float(z[0]),
            s=float(self.s_max * expit(z[1])),
            q=float(self.eps + (1.0 - 2.0 * self.eps) * expit(z[2])),
        )

    def to_unconstrained(self, theta: SourceParams) -> np.ndarray:
        s = np.clip(theta.s, 1e-6 * self.s_max, (1.0 - 1e-6) * self.s_max)
        q = np.clip(theta.q, 2.0 * self.eps, 1.0 - 2.0 * self.eps)
        return np.array([theta.s0, logit(s / self.s_max), logit((q - self.eps) / (1.0 - 2.0 * self.eps))])


def log_likelihood(counts: OutcomeCounts, probabilities: np.ndarray) -> float:
    """sum_j n_j log p_j; outcomes never observed contribute nothing."""
    observed = counts.counts > 0
    p = np.asarray(probabilities, dtype=float)[observed]
    if np.any(p <= 0):
        return -np.inf
    return float(counts.counts[observed] @ np.log(p))


def _divergence(frequencies: np.ndarray, probabilities: np.ndarray) -> float:
    # sum_j f_j (r_j - log1p(r_j)) + sum over unobserved p_j, with r_j = (p_j - f_j) / f_j
    observed = frequencies > 0
    f = frequencies[observed]
    p = probabilities[observed]
    if np.any(p <= 0):
        return np.inf
    r = (p - f) / f
    return float(f @ (r - np.log1p(r)) + probabilities[~observed].sum())


def maximize_likelihood(
    counts: OutcomeCounts,
    model: ProbabilityModel,
    theta0: SourceParams,
    s_max: float = DEFAULT_S_MAX,
    restarts: int = DEFAULT_RESTARTS,
    centroid_step: float = 0.05,
) -> EstimationResult:
    """Bounded derivative-free likelihood maximization for any outcome-probability model."""
    if counts.populated < 2:
        raise DegenerateDataError(f"ML: only {counts.populated} outcome(s) observed; the data carry no information")
    if not theta0.s <= s_max:
        raise DomainError(f"ML: initial separation {theta0.s} exceeds the search bound {s_max}")
    transform = ParameterTransform(s_max=s_max)
    frequencies = counts.frequencies

    def objective(z: np.ndarray) -> float:
        try:
            return _divergence(frequencies, model(transform.to_params(z)))
        except (TruncationError, NumericalAccuracyError, DomainError):
            return np.inf

    start = transform.to_unconstrained(theta0)
    best = None
    iterations = evaluations = 0
    converged = False
    for attempt in range(restarts + 1):
        steps = np.diag([centroid_step, 0.5, 0.5]) / (attempt + 1)
        outcome = minimize(
            objective,
            start,
            method="Nelder-Mead",
            options={
                "initial_simplex": np.vstack([start, start + steps]),
                "xatol": XATOL,
                "fatol": FATOL,
                "maxiter": MAX_ITERATIONS,
                "maxfev": 2 * MAX_ITERATIONS,
            },
        )
        iterations += int(outcome.nit)
        evaluations += int(outcome.nfev)
        if best is None or outcome.fun <= best.fun:
            best = outcome
        converged = bool(outcome.success)
        start = best.x

    flags = () if converged and np.isfinite(best.fun) else ("unconverged",)
    theta = transform.to_params(best.x)
    if flags:
        logger.warning(f"ML: search did not converge; best point {theta}")
    return EstimationResult(
        theta=theta,
        log_likelihood=log_likelihood(counts, model(theta)),
        converged=not flags,
        iterations=iterations,
        evaluations=evaluations,
        flags=flags,
    )


def canonicalize_labels(
    result: EstimationResult,
    counts: OutcomeCounts,
    model: ProbabilityModel,
    x0: float,
) -> EstimationResult:
    """
    Reflection about x0 maps (s0, s, q) to (2 x0 - s0, s, 1 - q). When both labelings explain the data
    equally well and q > 1/2, report the reflected one.
    """
    if result.theta.q <= 0.5:
        return result
    mirrored = result.theta.reflected(x0)
    try:
        mirrored_ll = log_likelihood(counts, model(mirrored))
    except (TruncationError, NumericalAccuracyError, DomainError):
        return result
    if abs(mirrored_ll - result.log_likelihood) > EQUIVALENCE_RTOL * max(1.0, abs(result.log_likelihood)):
        return result
    logger.debug(f"ML: relabelled {result.theta} as {mirrored}")
    return replace(result, theta=mirrored, log_likelihood=mirrored_ll, canonicalized=True)


def povm_model(spec: PovmSpec, basis: OrthonormalBasis) -> ProbabilityModel:
    return lambda theta: outcome_probabilities(spec, basis, theta)


def ml_estimate(
    counts: OutcomeCounts,
    spec: PovmSpec,
    basis: OrthonormalBasis,
    theta0: SourceParams,
    s_max: Optional[float] = None,
    restarts: int = DEFAULT_RESTARTS,
) -> EstimationResult:
    """ML estimate from counts of the four-outcome measurement, with labels resolved to q <= 1/2 when ambiguous."""
    s_max = DEFAULT_S_MAX * basis.model.sigma if s_max is None else s_max
    model = povm_model(spec, basis)
    result = maximize_likelihood(counts, model, theta0, s_max=s_max, restarts=restarts,
                                 centroid_step=0.05 * basis.model.sigma)
    return canonicalize_labels(result, counts, model, spec.x0)
