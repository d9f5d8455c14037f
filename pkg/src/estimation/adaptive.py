"""
Two-stage adaptive estimation: a fraction of the photons is spent on pixelated direct imaging to
locate the weighted centroid, the rest on the phi-family measurement displaced to that estimate.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel

from src.core.errors import DomainError, SuperresError
from src.core.psf import PsfModel, intensity_moments
from src.core.quadrature import LEGENDRE_ORDER, composite_legendre_rule
from src.estimation.likelihood import (
    DEFAULT_S_MAX,
    EstimationResult,
    maximize_likelihood,
    ml_estimate,
)
from src.estimation.sampling import RNG_ALGORITHM, OutcomeCounts, draw_counts, make_generator
from src.limits.fisher import PARAMETER_ORDER, SourceParams
from src.limits.quantum import quantum_precisions
from src.measurement.analysis import optimal_displacement
from src.measurement.direct_imaging import intensity_profile
from src.measurement.povm import build_phi_family, outcome_probabilities
from src.modes.basis import DEFAULT_DIMENSION, build_basis

logger = logging.getLogger(__name__)

DEFAULT_FRACTION = 0.2
DEFAULT_PHI = 9.0 * np.pi / 20.0
PANELS_PER_BIN = 2
MIN_START_SEPARATION = 0.01
START_Q_RANGE = (0.05, 0.95)

STAGE_ONE, STAGE_TWO, DIRECT_ONLY = 1, 2, 3


@dataclass(frozen=True)
class DetectorFrame:
    """Pixels of width bin_width covering origin +- half_width, in units of sigma."""
    half_width: float = 6.0
    bin_width: float = 0.1
    origin: float = 0.0

    @property
    def bins(self) -> int:
        return int(round(2.0 * self.half_width / self.bin_width))

    def edges(self, sigma: float = 1.0) -> np.ndarray:
        return self.origin + sigma * np.linspace(-self.half_width, self.half_width, self.bins + 1)

    def centers(self, sigma: float = 1.0) -> np.ndarray:
        e = self.edges(sigma)
        return 0.5 * (e[:-1] + e[1:])


def binned_probabilities(model: PsfModel, theta: SourceParams, frame: DetectorFrame) -> np.ndarray:
    """Pixel probabilities of direct imaging, conditioned on the photon landing inside the frame."""
    edges = frame.edges(model.sigma)
    rule = composite_legendre_rule(edges[0], edges[-1], frame.bins * PANELS_PER_BIN)
    weighted = intensity_profile(model, theta, rule.nodes) * rule.weights
    per_bin = weighted.reshape(frame.bins, PANELS_PER_BIN * LEGENDRE_ORDER).sum(axis=1)
    total = per_bin.sum()
    if not total > 0:
        raise DomainError(f"ADAPTIVE: sources at {theta} put no light on the detector frame")
    return np.clip(per_bin, 0.0, None) / total


@dataclass(frozen=True)
class AdaptiveSchedule:
    total_photons: int
    fraction: float = DEFAULT_FRACTION
    phi: float = DEFAULT_PHI
    dimension: int = DEFAULT_DIMENSION
    frame: DetectorFrame = field(default_factory=DetectorFrame)

    def __post_init__(self):
        if not 0.0 < self.fraction < 1.0:
            raise DomainError(f"ADAPTIVE: first-stage fraction must lie in (0, 1), got {self.fraction}")
        if self.total_photons < 2:
            raise DomainError(f"ADAPTIVE: both stages need a photon, got N={self.total_photons}")

    @property
    def first_stage_photons(self) -> int:
        return int(min(self.total_photons - 1, max(1, round(self.fraction * self.total_photons))))

    @property
    def second_stage_photons(self) -> int:
        return self.total_photons - self.first_stage_photons

    def describe(self) -> dict:
        return {
            "total_photons": self.total_photons,
            "fraction": self.fraction,
            "stage1": {
                "measurement": "direct-imaging",
                "photons": self.first_stage_photons,
                "bins": self.frame.bins,
                "bin_width": self.frame.bin_width,
                "half_width": self.frame.half_width,
            },
            "stage2": {
                "measurement": "phi-family",
                "photons": self.second_stage_photons,
                "phi": self.phi,
                "dimension": self.dimension,
            },
        }


@dataclass(frozen=True)
class AdaptiveOutcome:
    stage1: Optional[EstimationResult]
    x0_hat: float
    fallback: bool
    stage2: EstimationResult
    stage1_counts: Tuple[int, ...] = ()
    stage2_counts: Tuple[int, ...] = ()

    @property
    def theta(self) -> SourceParams:
        return self.stage2.theta

    def to_dict(self) -> dict:
        return {
            "stage1": None if self.stage1 is None else self.stage1.to_dict(),
            "x0_hat": self.x0_hat,
            "fallback": self.fallback,
            "stage2": self.stage2.to_dict(),
        }


def _moment_start(model: PsfModel, counts: OutcomeCounts, frame: DetectorFrame, s_max: float) -> Tuple[float, SourceParams]:
    """Histogram mean, and a start point assuming balanced sources with the variance excess as separation."""
    centers = frame.centers(model.sigma)
    weights = counts.frequencies
    mean = float(weights @ centers)
    variance = float(weights @ (centers - mean) ** 2)
    _, psf_variance = intensity_moments(model)
    excess = variance - psf_variance - (frame.bin_width * model.sigma) ** 2 / 12.0
    s = 2.0 * np.sqrt(max(excess, 0.0))
    s = float(np.clip(s, MIN_START_SEPARATION * model.sigma, 0.9 * s_max))
    return mean, SourceParams(s0=mean, s=s, q=0.5)


def estimate_direct_imaging(
    model: PsfModel,
    counts: OutcomeCounts,
    frame: DetectorFrame,
    s_max: float,
) -> Tuple[float, Optional[EstimationResult]]:
    """(histogram mean, binned ML estimate or None when the estimate is unusable)."""
    mean, start = _moment_start(model, counts, frame, s_max)
    try:
        result = maximize_likelihood(
            counts, lambda theta: binned_probabilities(model, theta, frame), start, s_max=s_max,
            centroid_step=0.05 * model.sigma,
        )
    except SuperresError as e:
        logger.warning(f"ADAPTIVE: direct-imaging estimate failed: {e}")
        return mean, None
    return mean, result if result.converged else None


def _clamped_start(theta: SourceParams, sigma: float, s_max: float) -> SourceParams:
    return SourceParams(
        s0=theta.s0,
        s=float(np.clip(theta.s, MIN_START_SEPARATION * sigma, 0.9 * s_max)),
        q=float(np.clip(theta.q, *START_Q_RANGE)),
    )


def adaptive_two_stage(
    schedule: AdaptiveSchedule,
    theta_true: SourceParams,
    seed: int,
    model: PsfModel,
    replication: int = 0,
) -> AdaptiveOutcome:
    """
    Stage 1 estimates x0_opt = s0 - s (1 - 2q) / 2 from binned direct imaging (falling back to the
    histogram mean); stage 2 runs the phi-family measurement at that displacement and re-estimates theta.
    """
    s_max = DEFAULT_S_MAX * model.sigma
    frame = schedule.frame
    stage1_counts = draw_counts(
        binned_probabilities(model, theta_true, frame),
        schedule.first_stage_photons,
        make_generator(seed, replication, STAGE_ONE),
    )
    mean, stage1 = estimate_direct_imaging(model, stage1_counts, frame, s_max)
    if stage1 is None:
        x0_hat = mean
        start = _clamped_start(SourceParams(s0=mean, s=0.1 * model.sigma, q=0.5), model.sigma, s_max)
        logger.warning(f"ADAPTIVE: stage 1 fell back to the histogram mean {mean:.6g}")
    else:
        x0_hat = optimal_displacement(stage1.theta)
        start = _clamped_start(stage1.theta, model.sigma, s_max)

    basis = build_basis(model, x0_hat, schedule.dimension)
    spec = build_phi_family(schedule.phi, x0_hat)
    stage2_counts = draw_counts(
        outcome_probabilities(spec, basis, theta_true),
        schedule.second_stage_photons,
        make_generator(seed, replication, STAGE_TWO),
    )
    stage2 = ml_estimate(stage2_counts, spec, basis, start, s_max=s_max)
    return AdaptiveOutcome(
        stage1=stage1,
        x0_hat=float(x0_hat),
        fallback=stage1 is None,
        stage2=stage2,
        stage1_counts=tuple(int(n) for n in stage1_counts.counts),
        stage2_counts=tuple(int(n) for n in stage2_counts.counts),
    )


def direct_only_estimate(
    schedule: AdaptiveSchedule,
    theta_true: SourceParams,
    seed: int,
    model: PsfModel,
    replication: int = 0,
) -> Optional[EstimationResult]:
    """The all-direct-imaging comparison run on the same photon budget."""
    counts = draw_counts(
        binned_probabilities(model, theta_true, schedule.frame),
        schedule.total_photons,
        make_generator(seed, replication, DIRECT_ONLY),
    )
    return estimate_direct_imaging(model, counts, schedule.frame, DEFAULT_S_MAX * model.sigma)[1]


class AdaptiveSummary(BaseModel):
    order: List[str] = list(PARAMETER_ORDER)
    theta_true: dict
    schedule: dict
    replications: int
    seed: int
    failures: int
    fallbacks: int
    estimator_mean: List[float]
    covariance: List[List[float]]
    stage1_variance_s: float
    stage2_variance_s: float
    direct_variance_s: float
    quantum_bound_s: float
    variance_to_quantum_s: float
    direct_to_adaptive_s: float
    rng: str = RNG_ALGORITHM
    psf: dict

    @property
    def flagged(self) -> bool:
        return self.failures > 0 or self.fallbacks > 0


def _adaptive_task(task) -> Tuple[Optional[AdaptiveOutcome], Optional[EstimationResult]]:
    schedule, theta, seed, model, index = task
    try:
        outcome = adaptive_two_stage(schedule, theta, seed, model, index)
    except SuperresError as e:
        logger.warning(f"ADAPTIVE: replication {index} failed: {e}")
        outcome = None
    return outcome, direct_only_estimate(schedule, theta, seed, model, index)


def _variance(values: List[float]) -> float:
    return float(np.var(values, ddof=1)) if len(values) > 1 else float("nan")


def adaptive_experiment(
    schedule: AdaptiveSchedule,
    theta: SourceParams,
    seed: int,
    replications: int,
    model: PsfModel,
    jobs: int = 1,
) -> AdaptiveSummary:
    """Repeat the two-stage strategy and pair every replication with an all-direct-imaging run."""
    tasks = [(schedule, theta, seed, model, r) for r in range(replications)]
    if jobs <= 1:
        results = [_adaptive_task(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_adaptive_task, tasks))

    outcomes = [outcome for outcome, _ in results if outcome is not None]
    finals = np.array([o.theta.as_array() for o in outcomes]).reshape(-1, 3)
    stage1_s = [o.stage1.theta.s for o in outcomes if o.stage1 is not None]
    direct_s = [d.theta.s for _, d in results if d is not None]

    quantum_bound = 1.0 / (schedule.total_photons * quantum_precisions(model, theta).H_s)
    if len(finals) > 1:
        mean, covariance = finals.mean(axis=0), np.cov(finals, rowvar=False, ddof=1)
    else:
        mean, covariance = np.full(3, np.nan), np.full((3, 3), np.nan)
    stage2_variance = float(covariance[1, 1])
    direct_variance = _variance(direct_s)
    logger.info(f"ADAPTIVE: {len(outcomes)}/{replications} replications, N={schedule.total_photons}")
    return AdaptiveSummary(
        theta_true=theta.to_dict(),
        schedule=schedule.describe(),
        replications=replications,
        seed=seed,
        failures=replications - len(outcomes),
        fallbacks=sum(1 for o in outcomes if o.fallback),
        estimator_mean=mean.tolist(),
        covariance=covariance.tolist(),
        stage1_variance_s=_variance(stage1_s),
        stage2_variance_s=stage2_variance,
        direct_variance_s=direct_variance,
        quantum_bound_s=quantum_bound,
        variance_to_quantum_s=stage2_variance / quantum_bound,
        direct_to_adaptive_s=direct_variance / stage2_variance,
        psf=model.descriptor(),
    )
