"""
Photon-counting simulation. Every random draw comes from numpy's Philox4x64-10 counter-based bit
generator keyed by SeedSequence(seed, spawn_key=keys), so a (seed, keys) pair names one reproducible
stream on every platform.
"""
import logging
from dataclasses import dataclass

import numpy as np

from src.core.errors import DomainError
from src.limits.fisher import SourceParams
from src.measurement.povm import PovmSpec, outcome_probabilities
from src.modes.basis import OrthonormalBasis

logger = logging.getLogger(__name__)

RNG_ALGORITHM = "Philox4x64-10"


@dataclass(frozen=True, eq=False)
class OutcomeCounts:
    """Detections per outcome. Expected (non-integer) counts are accepted for fixed-point checks."""
    counts: np.ndarray

    def __post_init__(self):
        counts = np.array(self.counts)
        if counts.ndim != 1 or counts.size < 2:
            raise DomainError("COUNTS: need a vector of at least two outcome counts")
        if not np.all(np.isfinite(counts)) or np.any(counts < 0):
            raise DomainError(f"COUNTS: counts must be finite and non-negative, got {counts}")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def expected(cls, probabilities: np.ndarray, n_photons: float) -> "OutcomeCounts":
        return cls(n_photons * np.asarray(probabilities, dtype=float))

    @property
    def total(self):
        return self.counts.sum()

    @property
    def populated(self) -> int:
        return int(np.count_nonzero(self.counts))

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / self.total

    def to_list(self) -> list:
        return self.counts.tolist()


def make_generator(seed: int, *keys: int) -> np.random.Generator:
    if seed < 0:
        raise DomainError(f"RNG: seed must be a non-negative integer, got {seed}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))))


def draw_counts(probabilities: np.ndarray, n_photons: int, rng: np.random.Generator) -> OutcomeCounts:
    if n_photons < 1:
        raise DomainError(f"RNG: photon count must be at least 1, got {n_photons}")
    p = np.clip(np.asarray(probabilities, dtype=float), 0.0, None)
    return OutcomeCounts(rng.multinomial(int(n_photons), p / p.sum()))


def sample_outcomes(
    spec: PovmSpec,
    basis: OrthonormalBasis,
    theta: SourceParams,
    n_photons: int,
    seed: int,
    stream: int = 0,
) -> OutcomeCounts:
    """Multinomial draw of n_photons detections from the measurement's outcome probabilities."""
    return draw_counts(outcome_probabilities(spec, basis, theta), n_photons, make_generator(seed, stream))
