"""Finite-population generation and stratification.

Populations follow a linear superpopulation scheme: auxiliaries are
multivariate normal with an AR(1) correlation structure, outcomes are a
sparse linear signal plus iid normal noise, and an informativeness
variable ``z`` is built to correlate with the outcome errors so that
designs keyed to ``z`` become informative.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.linalg import toeplitz

from .errors import ConfigError

__all__ = [
    "PopulationConfig",
    "Population",
    "StrataLabels",
    "generate_population",
    "assign_strata",
    "population_total",
    "export_population_csv",
]


@dataclass(frozen=True)
class PopulationConfig:
    """Parameters of the generating scheme.

    Attributes
    ----------
    N : population size.
    p : auxiliary dimension.
    s : number of leading nonzero (unit) coefficients, ``0 <= s <= p``.
    mu : common mean of the auxiliaries.
    rho : AR(1) correlation base; cov(x_i, x_j) = rho**|i-j|.
    sigma2 : error variance.
    r : informativeness strength in [-1, 1]; z = r*e + sqrt(1-r^2)*z*.
    seed : rng seed; identical configs generate bit-identical populations.
    """

    N: int = 1000
    p: int = 90
    s: int = 5
    mu: float = 2.0
    rho: float = 0.2
    sigma2: float = 1.0
    r: float = -0.75
    seed: int = 0

    def __post_init__(self) -> None:
        if self.N <= 0:
            raise ConfigError(f"population size must be positive, got N={self.N}")
        if self.p <= 0:
            raise ConfigError(f"auxiliary dimension must be positive, got p={self.p}")
        if not 0 <= self.s <= self.p:
            raise ConfigError(f"need 0 <= s <= p, got s={self.s}, p={self.p}")
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError(f"rho must lie in [0, 1), got {self.rho}")
        if self.sigma2 < 0:
            raise ConfigError(f"sigma2 must be non-negative, got {self.sigma2}")
        if abs(self.r) > 1:
            raise ConfigError(f"r must lie in [-1, 1], got {self.r}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")


@dataclass(frozen=True)
class Population:
    """A realized finite population; arrays are read-only after construction.

    ``y = m_oracle + e`` holds exactly, with ``m_oracle = x @ beta_true``.
    The true errors ``e`` are retained so oracle benchmarks and diagnostics
    never have to re-derive them.
    """

    x: np.ndarray
    y: np.ndarray
    e: np.ndarray
    z: np.ndarray
    m_oracle: np.ndarray
    beta_true: np.ndarray
    config: PopulationConfig

    @property
    def N(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class StrataLabels:
    """Stratum labels in {1..H} plus the per-stratum sizes."""

    labels: np.ndarray
    sizes: np.ndarray

    @property
    def H(self) -> int:
        return self.sizes.shape[0]

    def indices(self, h: int) -> np.ndarray:
        """Unit indices of stratum ``h`` (1-based label)."""
        return np.flatnonzero(self.labels == h)


def _freeze(*arrays: np.ndarray) -> None:
    for a in arrays:
        a.setflags(write=False)


def generate_population(config: PopulationConfig) -> Population:
    """Generate a population from the superpopulation scheme.

    Auxiliary rows are iid MVN(mu*1, Sigma) with Sigma_ij = rho**|i-j|
    (sampled through the Cholesky factor, computed once), the coefficient
    vector has its first ``s`` entries equal to one, errors are iid
    N(0, sigma2), and z = r*e + sqrt(1-r^2)*z* with z* iid N(0,1)
    independent of e.  Deterministic given ``config.seed``.
    """
    rng = np.random.default_rng(config.seed)
    N, p = config.N, config.p

    chol = np.linalg.cholesky(toeplitz(config.rho ** np.arange(p)))
    x = config.mu + rng.standard_normal((N, p)) @ chol.T

    beta = np.zeros(p)
    beta[: config.s] = 1.0
    m_oracle = x @ beta

    e = np.sqrt(config.sigma2) * rng.standard_normal(N)
    # z* is drawn even when |r| = 1 so the stream layout is r-invariant.
    z_star = rng.standard_normal(N)
    z = config.r * e + np.sqrt(1.0 - config.r**2) * z_star
    y = m_oracle + e

    _freeze(x, y, e, z, m_oracle, beta)
    return Population(x=x, y=y, e=e, z=z, m_oracle=m_oracle, beta_true=beta, config=config)


def assign_strata(pop: Population, H: int) -> StrataLabels:
    """Partition units into H strata by ascending z.

    Units are sorted by z (ties broken by unit index) and cut into H
    consecutive blocks; block sizes differ by at most one, with the first
    ``N mod H`` strata taking the extra unit.  Stratum 1 holds the lowest
    z values.
    """
    N = pop.N
    if H < 1:
        raise ConfigError(f"H must be at least 1, got {H}")
    if H > N:
        raise ConfigError(f"cannot form H={H} strata from N={N} units")

    order = np.argsort(pop.z, kind="stable")
    base, rem = divmod(N, H)
    sizes = np.full(H, base, dtype=np.int64)
    sizes[:rem] += 1

    labels = np.empty(N, dtype=np.int64)
    stop = np.cumsum(sizes)
    start = stop - sizes
    for h in range(H):
        labels[order[start[h] : stop[h]]] = h + 1

    _freeze(labels, sizes)
    return StrataLabels(labels=labels, sizes=sizes)


def population_total(values: np.ndarray) -> float:
    """Exact sum of a per-unit value array (the target parameter on y)."""
    return float(np.sum(values))


def export_population_csv(pop: Population, strata: StrataLabels | None, path: str) -> None:
    """Write a population as CSV: unit_id, y, z, stratum, x_1..x_p.

    The stratum column is written as 0 when no stratification is supplied.
    This is the file format consumed by the CLI ``estimate`` path.
    """
    labels = strata.labels if strata is not None else np.zeros(pop.N, dtype=np.int64)
    header = ["unit_id", "y", "z", "stratum"] + [f"x_{j + 1}" for j in range(pop.p)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(pop.N):
            writer.writerow(
                [i + 1, repr(float(pop.y[i])), repr(float(pop.z[i])), int(labels[i])]
                + [repr(float(v)) for v in pop.x[i]]
            )
