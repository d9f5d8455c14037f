import logging
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel

from src.core.errors import SuperresError
from src.estimation.likelihood import DEFAULT_S_MAX, EstimationResult, ml_estimate
from src.estimation.sampling import RNG_ALGORITHM, make_generator, sample_outcomes
from src.limits.fisher import PARAMETER_ORDER, SourceParams
from src.limits.quantum import qfim_closed
from src.measurement.povm import PovmSpec, classical_fim
from src.modes.basis import OrthonormalBasis

logger = logging.getLogger(__name__)

MIN_REPLICATIONS = 100
# key appended to the replication stream for the optimizer start
START_STREAM = 4
START_SPREAD = (0.25, 0.5, 0.15)
START_Q_RANGE = (0.02, 0.98)


class ExperimentSummary(BaseModel):
    """Empirical estimator statistics against the classical (F^-1/N) and quantum (Q^-1/N) bounds."""
    order: List[str] = list(PARAMETER_ORDER)
    theta_true: dict
    estimator_mean: List[float]
    bias: List[float]
    covariance: List[List[float]]
    crlb_classical: List[List[float]]
    crlb_quantum: List[List[float]]
    variance_to_classical: List[float]
    variance_to_quantum: List[float]
    n_photons: int
    replications: int
    seed: int
    failures: int
    unconverged: int
    rng: str = RNG_ALGORITHM
    povm: dict
    psf: dict

    @property
    def flagged(self) -> bool:
        return self.failures > 0 or self.unconverged > 0


def perturbed_start(theta: SourceParams, seed: int, index: int, s_max: float) -> SourceParams:
    """
    Optimizer start for replication `index`: the truth moved by up to a quarter separation in s0,
    half the separation in s and 0.15 in q, drawn from a sub-stream of that replication.
    """
    u = make_generator(seed, index, START_STREAM).uniform(-1.0, 1.0, size=3)
    s0_spread, s_spread, q_spread = START_SPREAD
    return SourceParams(
        s0=theta.s0 + s0_spread * theta.s * u[0],
        s=float(np.clip(theta.s * (1.0 + s_spread * u[1]), 1e-3 * s_max, 0.9 * s_max)),
        q=float(np.clip(theta.q + q_spread * u[2], *START_Q_RANGE)),
    )


def _replicate(task: Tuple[PovmSpec, OrthonormalBasis, SourceParams, int, int, int]) -> Optional[EstimationResult]:
    spec, basis, theta, n_photons, seed, index = task
    try:
        counts = sample_outcomes(spec, basis, theta, n_photons, seed, stream=index)
        start = perturbed_start(theta, seed, index, DEFAULT_S_MAX * basis.model.sigma)
        return ml_estimate(counts, spec, basis, start)
    except SuperresError as e:
        logger.warning(f"EXPERIMENT: replication {index} failed: {e}")
        return None


def run_replications(tasks: list, jobs: int = 1) -> list:
    """Map replications over a process pool; results keep task order."""
    if jobs <= 1:
        return [_replicate(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_replicate, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


def summarize_estimates(
    estimates: np.ndarray,
    theta: SourceParams,
    crlb_classical: np.ndarray,
    crlb_quantum: np.ndarray,
) -> dict:
    if len(estimates) < 2:
        mean, covariance = np.full(3, np.nan), np.full((3, 3), np.nan)
    else:
        mean = estimates.mean(axis=0)
        covariance = np.cov(estimates, rowvar=False, ddof=1)
    variances = np.diag(covariance)
    return {
        "estimator_mean": mean.tolist(),
        "bias": (mean - theta.as_array()).tolist(),
        "covariance": covariance.tolist(),
        "variance_to_classical": (variances / np.diag(crlb_classical)).tolist(),
        "variance_to_quantum": (variances / np.diag(crlb_quantum)).tolist(),
    }


def crlb_experiment(
    theta: SourceParams,
    spec: PovmSpec,
    basis: OrthonormalBasis,
    n_photons: int,
    replications: int,
    seed: int,
    jobs: int = 1,
) -> ExperimentSummary:
    """
    R independent sample-and-estimate cycles, replication r drawing from stream r of the seed.
    Each estimate starts from perturbed_start rather than the truth.
    """
    if replications < MIN_REPLICATIONS:
        logger.warning(f"EXPERIMENT: {replications} replications give a loose variance estimate")
    tasks = [(spec, basis, theta, n_photons, seed, r) for r in range(replications)]
    results = run_replications(tasks, jobs)

    good = [r for r in results if r is not None]
    failures = len(results) - len(good)
    unconverged = sum(1 for r in good if not r.converged)
    estimates = np.array([r.theta.as_array() for r in good]).reshape(-1, 3)

    crlb_classical = classical_fim(spec, basis, theta).covariance_bound(n_photons)
    crlb_quantum = qfim_closed(basis.model, theta).covariance_bound(n_photons)
    logger.info(f"EXPERIMENT: {len(good)}/{replications} replications at N={n_photons}, {failures} failed")
    return ExperimentSummary(
        theta_true=theta.to_dict(),
        crlb_classical=crlb_classical.tolist(),
        crlb_quantum=crlb_quantum.tolist(),
        n_photons=n_photons,
        replications=replications,
        seed=seed,
        failures=failures,
        unconverged=unconverged,
        povm=spec.to_dict(),
        psf=basis.model.descriptor(),
        **summarize_estimates(estimates, theta, crlb_classical, crlb_quantum),
    )
