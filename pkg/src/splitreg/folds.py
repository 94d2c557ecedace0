"""Random K-fold partition of the population.

Fold labels are iid uniform on {1..K}, drawn from a stream independent of
the design draw, so sampled-or-not carries no information about fold
membership.  Balanced assignment exists for experimentation but is off by
default: the estimator theory assumes iid labels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .designs import DrawnSample
from .errors import ConfigError

__all__ = ["FoldAssignment", "FoldPart", "assign_folds", "fold_partition"]


@dataclass(frozen=True)
class FoldAssignment:
    """Per-unit fold labels in {1..K} and the realized fold sizes."""

    labels: np.ndarray
    K: int
    fold_sizes: np.ndarray

    def members(self, k: int) -> np.ndarray:
        """Unit indices of fold ``k`` (1-based label)."""
        return np.flatnonzero(self.labels == k)


@dataclass(frozen=True)
class FoldPart:
    """One fold's population units, sampled units, and their counts."""

    k: int
    population_units: np.ndarray
    sampled_units: np.ndarray

    @property
    def N_k(self) -> int:
        return self.population_units.shape[0]

    @property
    def n_k(self) -> int:
        return self.sampled_units.shape[0]


def assign_folds(
    N: int, K: int, rng: np.random.Generator, balanced: bool = False
) -> FoldAssignment:
    """Assign each unit a fold label; iid uniform unless ``balanced``."""
    if K < 2:
        raise ConfigError(f"K must be at least 2, got {K}")
    if K > N:
        raise ConfigError(f"cannot form K={K} folds from N={N} units")
    if balanced:
        labels = np.empty(N, dtype=np.int64)
        labels[rng.permutation(N)] = np.arange(N) % K + 1
    else:
        labels = rng.integers(1, K + 1, size=N)
    sizes = np.bincount(labels, minlength=K + 1)[1:]
    labels.setflags(write=False)
    sizes.setflags(write=False)
    return FoldAssignment(labels=labels, K=K, fold_sizes=sizes)


def fold_partition(assignment: FoldAssignment, sample: DrawnSample) -> list[FoldPart]:
    """Split the population and the realized sample by fold."""
    if assignment.labels.shape[0] != sample.indicators.shape[0]:
        raise ConfigError("fold assignment and sample refer to different population sizes")
    parts = []
    for k in range(1, assignment.K + 1):
        units = assignment.members(k)
        parts.append(
            FoldPart(
                k=k,
                population_units=units,
                sampled_units=units[sample.indicators[units]],
            )
        )
    return parts
