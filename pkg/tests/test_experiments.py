import numpy as np
import pytest

from src.core.errors import DomainError
from src.estimation.adaptive import (
    AdaptiveSchedule,
    DetectorFrame,
    adaptive_experiment,
    adaptive_two_stage,
    binned_probabilities,
)
from src.estimation.experiments import crlb_experiment, perturbed_start, summarize_estimates
from src.estimation.likelihood import ml_estimate
from src.estimation.sampling import sample_outcomes
from src.limits.fisher import SourceParams
from src.limits.quantum import qfim_closed
from src.measurement.povm import classical_fim
from src.measurement.analysis import optimal_displacement
from src.measurement.povm import build_phi_family
from src.modes.basis import build_basis

TRUTH = SourceParams(0.0, 0.5, 0.3)
# the balanced setup at s = 0.1 where the four-outcome measurement falls short of the quantum limit
BALANCED = SourceParams(0.0, 0.1, 0.5)


def _aligned(gaussian, theta=TRUTH):
    x0 = optimal_displacement(theta)
    return build_phi_family(9 * np.pi / 20, x0), build_basis(gaussian, x0, 30)


def test_experiment_is_reproducible(gaussian):
    spec, basis = _aligned(gaussian)
    first = crlb_experiment(TRUTH, spec, basis, n_photons=10000, replications=4, seed=11)
    second = crlb_experiment(TRUTH, spec, basis, n_photons=10000, replications=4, seed=11)
    assert first.model_dump() == second.model_dump()
    assert first.rng == "Philox4x64-10"
    assert first.order == ["s0", "s", "q"]


def test_summary_needs_two_estimates():
    summary = summarize_estimates(np.array([[0.0, 0.5, 0.3]]), TRUTH, np.eye(3), np.eye(3))
    assert np.all(np.isnan(summary["covariance"]))


@pytest.mark.slow
def test_estimator_saturates_classical_bound(gaussian):
    spec, basis = _aligned(gaussian)
    summary = crlb_experiment(TRUTH, spec, basis, n_photons=100000, replications=200, seed=2024)
    assert summary.failures == 0
    assert 0.7 < summary.variance_to_classical[1] < 1.4
    assert 0.7 < summary.variance_to_quantum[1] < 1.4


def test_schedule_splits_photons():
    schedule = AdaptiveSchedule(total_photons=1000, fraction=0.2)
    assert schedule.first_stage_photons == 200
    assert schedule.second_stage_photons == 800
    assert schedule.describe()["stage1"]["bins"] == 120
    with pytest.raises(DomainError):
        AdaptiveSchedule(total_photons=1000, fraction=1.0)
    with pytest.raises(DomainError):
        AdaptiveSchedule(total_photons=1)


def test_binned_probabilities_normalized(gaussian):
    p = binned_probabilities(gaussian, TRUTH, DetectorFrame())
    assert p.shape == (120,)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    balanced = binned_probabilities(gaussian, SourceParams(0.0, 0.5, 0.5), DetectorFrame())
    np.testing.assert_allclose(balanced, balanced[::-1], atol=1e-14)


def test_two_stage_is_reproducible(gaussian):
    schedule = AdaptiveSchedule(total_photons=20000)
    first = adaptive_two_stage(schedule, TRUTH, seed=5, model=gaussian)
    second = adaptive_two_stage(schedule, TRUTH, seed=5, model=gaussian)
    assert first.to_dict() == second.to_dict()
    assert sum(first.stage1_counts) == 4000
    assert sum(first.stage2_counts) == 16000


@pytest.mark.slow
def test_second_stage_beats_first_stage(gaussian):
    summary = adaptive_experiment(AdaptiveSchedule(total_photons=100000), TRUTH, seed=3, replications=20, model=gaussian)
    assert summary.failures == 0
    assert summary.stage2_variance_s < summary.stage1_variance_s
    assert summary.stage2_variance_s < summary.direct_variance_s


def test_starts_are_seeded_and_away_from_truth():
    starts = [perturbed_start(TRUTH, 11, r, 2.0) for r in range(20)]
    assert starts[3] == perturbed_start(TRUTH, 11, 3, 2.0)
    assert all(start != TRUTH for start in starts)
    assert all(abs(start.s0 - TRUTH.s0) <= 0.25 * TRUTH.s for start in starts)
    assert all(0.5 * TRUTH.s <= start.s <= 1.5 * TRUTH.s for start in starts)
    assert all(abs(start.q - TRUTH.q) <= 0.15 + 1e-12 for start in starts)


def test_balanced_setup_information_stays_below_quantum(gaussian):
    spec, basis = _aligned(gaussian, BALANCED)
    measured = classical_fim(spec, basis, BALANCED)
    quantum = qfim_closed(gaussian, BALANCED)
    assert measured.dominated_by(quantum, tol=1e-9)
    # even with s0 and q known, the separation information misses the quantum value
    assert measured.matrix[1, 1] < 0.9 * quantum.matrix[1, 1]


@pytest.mark.slow
def test_balanced_setup_variance_respects_both_bounds(gaussian):
    spec, basis = _aligned(gaussian, BALANCED)
    summary = crlb_experiment(BALANCED, spec, basis, n_photons=100000, replications=200, seed=8)
    assert summary.variance_to_quantum[1] >= summary.variance_to_classical[1]
    assert summary.variance_to_quantum[1] > 1.0


@pytest.mark.slow
def test_error_shrinks_with_photon_number(gaussian):
    spec, basis = _aligned(gaussian)

    def median_error(n_photons):
        errors = []
        for seed in range(20):
            counts = sample_outcomes(spec, basis, TRUTH, n_photons, seed)
            result = ml_estimate(counts, spec, basis, perturbed_start(TRUTH, seed, 0, 2.0))
            errors.append(abs(result.theta.s - TRUTH.s))
        return np.median(errors)

    assert median_error(1000000) < median_error(10000)


def test_balanced_sources_steer_stage_two_to_centroid(gaussian):
    truth = SourceParams(0.1, 0.5, 0.5)
    assert optimal_displacement(truth) == pytest.approx(truth.s0)
    outcome = adaptive_two_stage(AdaptiveSchedule(total_photons=200000), truth, seed=6, model=gaussian)
    assert abs(outcome.x0_hat - truth.s0) < 0.15


@pytest.mark.slow
def test_adaptive_setup_at_small_separation_respects_quantum_bound(gaussian):
    truth = SourceParams(0.0, 0.1, 0.3)
    schedule = AdaptiveSchedule(total_photons=1000000, fraction=0.2)
    summary = adaptive_experiment(schedule, truth, seed=1, replications=10, model=gaussian)
    assert summary.variance_to_quantum_s > 1.0
    assert summary.quantum_bound_s > 0
