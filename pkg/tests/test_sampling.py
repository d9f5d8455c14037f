import numpy as np
import pytest

from src.core.errors import DomainError
from src.limits.fisher import SourceParams
from src.measurement.povm import outcome_probabilities
from src.estimation.sampling import (
    RNG_ALGORITHM,
    OutcomeCounts,
    draw_counts,
    make_generator,
    sample_outcomes,
)


def test_generator_is_philox():
    assert isinstance(make_generator(1, 0).bit_generator, np.random.Philox)
    assert RNG_ALGORITHM == "Philox4x64-10"


def test_streams_are_reproducible_and_distinct():
    first = make_generator(12345, 3).random(8)
    np.testing.assert_array_equal(first, make_generator(12345, 3).random(8))
    assert not np.array_equal(first, make_generator(12345, 4).random(8))
    assert not np.array_equal(first, make_generator(12346, 3).random(8))


def test_draw_counts_conserves_photons():
    counts = draw_counts(np.array([0.1, 0.2, 0.3, 0.4]), 1000, make_generator(0))
    assert counts.total == 1000
    assert counts.counts.dtype.kind == "i"


def test_sample_outcomes_reproducible(basis, phi_spec, theta):
    a = sample_outcomes(phi_spec, basis, theta, 5000, seed=7, stream=2)
    b = sample_outcomes(phi_spec, basis, theta, 5000, seed=7, stream=2)
    np.testing.assert_array_equal(a.counts, b.counts)


def test_counts_validation():
    with pytest.raises(DomainError):
        OutcomeCounts(np.array([1, -1, 3]))
    with pytest.raises(DomainError):
        OutcomeCounts(np.array([5]))
    with pytest.raises(DomainError):
        make_generator(-1)
    with pytest.raises(DomainError):
        draw_counts(np.array([0.5, 0.5]), 0, make_generator(0))


def test_expected_counts_frequencies():
    counts = OutcomeCounts.expected(np.array([0.25, 0.75, 0.0]), 100)
    np.testing.assert_allclose(counts.frequencies, [0.25, 0.75, 0.0])
    assert counts.populated == 2


def test_counts_follow_multinomial_statistics(basis, phi_spec):
    truth = SourceParams(0.0, 0.5, 0.3)
    n_photons = 100000
    p = outcome_probabilities(phi_spec, basis, truth)
    frequencies = np.array([
        sample_outcomes(phi_spec, basis, truth, n_photons, seed=seed).frequencies for seed in range(100)
    ])
    stderr = np.sqrt(p * (1 - p) / n_photons)
    populated = n_photons * p >= 25
    assert np.all(np.abs(frequencies[:, populated] - p[populated]) < 5 * stderr[populated])
    assert np.all(np.abs(frequencies.mean(axis=0) - p) <= 5 * stderr / np.sqrt(100) + 1e-12)
