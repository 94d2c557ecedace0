"""Sampling designs: Poisson, SRSWOR, stratified SRSWOR, and rejective.

Each design exposes first-order inclusion probabilities, a sample drawer,
and an accessor for second-order (joint) inclusion probabilities.  The
rejective (conditional Poisson) design selects a fixed-size sample with
probability proportional to the product of per-unit odds; its exact
inclusion probabilities are ratios of elementary symmetric polynomials of
the odds, computed here entirely in the log domain.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DrawFailure, RecursionOverflow
from .popgen import StrataLabels

__all__ = [
    "PoissonDesign",
    "SRSWORDesign",
    "StratifiedDesign",
    "RejectiveDesign",
    "Design",
    "DrawnSample",
    "first_order_probs",
    "draw_sample",
    "joint_probs",
    "JointProbs",
    "delta_rowsum",
    "scaled_sigmoid_probs",
]


@dataclass(frozen=True)
class PoissonDesign:
    """Independent Bernoulli selection with per-unit probabilities."""

    pi: np.ndarray

    def __post_init__(self) -> None:
        pi = np.asarray(self.pi, dtype=float)
        if pi.ndim != 1 or pi.size == 0:
            raise ConfigError("pi must be a non-empty 1-d array")
        if np.any(pi <= 0) or np.any(pi > 1):
            raise ConfigError("Poisson probabilities must lie in (0, 1]")
        object.__setattr__(self, "pi", pi)

    @property
    def N(self) -> int:
        return self.pi.shape[0]


@dataclass(frozen=True)
class SRSWORDesign:
    """Simple random sampling without replacement, fixed size n from N."""

    N: int
    n: int

    def __post_init__(self) -> None:
        if not 1 <= self.n <= self.N:
            raise ConfigError(f"need 1 <= n <= N, got n={self.n}, N={self.N}")


@dataclass(frozen=True)
class StratifiedDesign:
    """Independent SRSWOR of size n_h within each stratum."""

    strata: StrataLabels
    n_h: np.ndarray

    def __post_init__(self) -> None:
        n_h = np.asarray(self.n_h, dtype=np.int64)
        if n_h.shape != self.strata.sizes.shape:
            raise ConfigError("n_h must have one entry per stratum")
        if np.any(n_h < 1) or np.any(n_h > self.strata.sizes):
            raise ConfigError("need 1 <= n_h <= N_h in every stratum")
        object.__setattr__(self, "n_h", n_h)

    @property
    def N(self) -> int:
        return self.strata.labels.shape[0]

    @property
    def n(self) -> int:
        return int(self.n_h.sum())


@dataclass(frozen=True)
class RejectiveDesign:
    """Conditional Poisson sampling: Bernoulli draws kept only at size n.

    ``p_bern`` are the Bernoulli probabilities of the accept-reject loop;
    the realized design weights samples by the product of the odds
    p/(1-p), so the exact inclusion probabilities differ (slightly) from
    ``p_bern``.  Use :func:`first_order_probs` for the exact values.
    """

    p_bern: np.ndarray
    n: int
    max_attempts: int = 1_000_000

    def __post_init__(self) -> None:
        p = np.asarray(self.p_bern, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ConfigError("p_bern must be a non-empty 1-d array")
        if np.any(p <= 0) or np.any(p >= 1):
            raise ConfigError("rejective Bernoulli probabilities must lie strictly in (0, 1)")
        if not 1 <= self.n <= p.size:
            raise ConfigError(f"need 1 <= n <= N, got n={self.n}, N={p.size}")
        object.__setattr__(self, "p_bern", p)

    @property
    def N(self) -> int:
        return self.p_bern.shape[0]

    @property
    def log_odds(self) -> np.ndarray:
        return np.log(self.p_bern) - np.log1p(-self.p_bern)


Design = PoissonDesign | SRSWORDesign | StratifiedDesign | RejectiveDesign


@dataclass(frozen=True)
class DrawnSample:
    """A realized sample: indicator vector, sorted index set, and its size."""

    indicators: np.ndarray
    indices: np.ndarray
    n_realized: int

    @classmethod
    def from_indicators(cls, indicators: np.ndarray) -> "DrawnSample":
        indicators = np.asarray(indicators, dtype=bool)
        indices = np.flatnonzero(indicators)
        return cls(indicators=indicators, indices=indices, n_realized=indices.size)

    @classmethod
    def from_indices(cls, indices: np.ndarray, N: int) -> "DrawnSample":
        indicators = np.zeros(N, dtype=bool)
        indicators[np.asarray(indices, dtype=np.int64)] = True
        return cls.from_indicators(indicators)


# ---------------------------------------------------------------------------
# Elementary symmetric polynomials of the odds, log domain.
# ---------------------------------------------------------------------------


def _log_prefix_table(log_w: np.ndarray, k_max: int) -> np.ndarray:
    """P[l, m] = log e_l(w_1..w_m) for l = 0..k_max, m = 0..N."""
    N = log_w.shape[0]
    P = np.full((k_max + 1, N + 1), -np.inf)
    P[0, :] = 0.0
    for m in range(1, N + 1):
        if k_max >= 1:
            P[1:, m] = np.logaddexp(P[1:, m - 1], log_w[m - 1] + P[:-1, m - 1])
    return P

def _log_suffix_table(log_w: np.ndarray, k_max: int) -> np.ndarray:
    """S[l, m] = log e_l(w_{m+1}..w_N) for l = 0..k_max, m = 0..N."""
    N = log_w.shape[0]
    S = np.full((k_max + 1, N + 1), -np.inf)
    S[0, :] = 0.0
    for m in range(N - 1, -1, -1):
        if k_max >= 1:
            S[1:, m] = np.logaddexp(S[1:, m + 1], log_w[m] + S[:-1, m + 1])
    return S


def _logsumexp(a: np.ndarray, axis: int = 0) -> np.ndarray:
    hi = np.max(a, axis=axis, keepdims=True)
    hi = np.where(np.isfinite(hi), hi, 0.0)
    return np.squeeze(hi, axis=axis) + np.log(np.sum(np.exp(a - hi), axis=axis))


def _cps_first_order(log_w: np.ndarray, n: int) -> np.ndarray:
    """Exact inclusion probabilities of conditional Poisson sampling.

    pi_i = w_i * e_{n-1}(w without i) / e_n(w), with the leave-one-out
    polynomials assembled from prefix/suffix tables so every operation is
    an addition of positive terms in the log domain.
    """
    N = log_w.shape[0]
    if n == 0:
        return np.zeros(N)
    if n == N:
        return np.ones(N)
    P = _log_prefix_table(log_w, n)
    S = _log_suffix_table(log_w, n)
    # terms[a, i] = log e_a(prefix before i) + log e_{n-1-a}(suffix after i)
    terms = np.empty((n, N))
    for a in range(n):
        terms[a, :] = P[a, :N] + S[n - 1 - a, 1:]
    log_pi = log_w + _logsumexp(terms, axis=0) - P[n, N]
    pi = np.exp(log_pi)
    if not np.all(np.isfinite(pi)):
        raise RecursionOverflow("symmetric-function recursion produced non-finite probabilities")
    return np.minimum(pi, 1.0)


def _cps_joint_matrix(log_w: np.ndarray, n: int) -> np.ndarray:
    """Exact joint inclusion probabilities of conditional Poisson sampling.

    Uses pi_ij = pi_i * pi_j', where pi_j' is the first-order probability
    of j under the size-(n-1) conditional design on the units without i.
    O(N^2 n); intended for moderate N (see joint_probs exact_cap).
    """
    N = log_w.shape[0]
    pi = _cps_first_order(log_w, n)
    out = np.empty((N, N))
    for i in range(N):
        reduced = np.delete(log_w, i)
        cond = _cps_first_order(reduced, n - 1)
        out[i, :i] = pi[i] * cond[:i]
        out[i, i] = pi[i]
        out[i, i + 1 :] = pi[i] * cond[i:]
    # Symmetric up to roundoff by construction; make it exact.
    out = 0.5 * (out + out.T)
    np.fill_diagonal(out, pi)
    return out


# ---------------------------------------------------------------------------
# First-order probabilities and sample drawing.
# ---------------------------------------------------------------------------


def first_order_probs(design: Design) -> np.ndarray:
    """Per-unit inclusion probabilities; exact for every design variant."""
    if isinstance(design, PoissonDesign):
        return design.pi.copy()
    if isinstance(design, SRSWORDesign):
        return np.full(design.N, design.n / design.N)
    if isinstance(design, StratifiedDesign):
        pi = np.empty(design.N)
        for h in range(design.strata.H):
            idx = design.strata.indices(h + 1)
            pi[idx] = design.n_h[h] / design.strata.sizes[h]
        return pi
    if isinstance(design, RejectiveDesign):
        return _cps_first_order(design.log_odds, design.n)
    raise TypeError(f"unknown design type: {type(design).__name__}")


def draw_sample(design: Design, rng: np.random.Generator) -> DrawnSample:
    """Draw one sample; deterministic given the rng state."""
    if isinstance(design, PoissonDesign):
        return DrawnSample.from_indicators(rng.random(design.N) < design.pi)
    if isinstance(design, SRSWORDesign):
        idx = rng.choice(design.N, size=design.n, replace=False)
        return DrawnSample.from_indices(idx, design.N)
    if isinstance(design, StratifiedDesign):
        chosen = []
        for h in range(design.strata.H):
            units = design.strata.indices(h + 1)
            chosen.append(rng.choice(units, size=design.n_h[h], replace=False))
        return DrawnSample.from_indices(np.concatenate(chosen), design.N)
    if isinstance(design, RejectiveDesign):
        return _draw_rejective(design.p_bern, design.n, design.max_attempts, rng)
    raise TypeError(f"unknown design type: {type(design).__name__}")


def _draw_rejective(
    p_bern: np.ndarray, n: int, max_attempts: int, rng: np.random.Generator
) -> DrawnSample:
    N = p_bern.shape[0]
    for _ in range(max_attempts):
        mask = rng.random(N) < p_bern
        if int(mask.sum()) == n:
            return DrawnSample.from_indicators(mask)
    raise DrawFailure(
        f"rejective draw not accepted within {max_attempts} attempts (target size {n})",
        acceptance_rate=0.0,
    )


# ---------------------------------------------------------------------------
# Joint (second-order) inclusion probabilities.
# ---------------------------------------------------------------------------


class JointProbs:
    """On-demand accessor for joint inclusion probabilities.

    Entries are served row-wise or as submatrices over a given index set,
    so an N x N table is never materialized for closed-form designs.  The
    accessor records how many Hajek-approximated entries were clamped to
    the positivity floor.
    """

    def __init__(self, pi: np.ndarray, row_fn, mode: str, matrix: np.ndarray | None = None):
        self.pi = pi
        self._row_fn = row_fn
        self.mode = mode
        self._matrix = matrix
        self.clamp_count = 0

    @property
    def N(self) -> int:
        return self.pi.shape[0]

    def row(self, i: int) -> np.ndarray:
        """pi_{i,.} over all j, with the diagonal entry equal to pi_i."""
        if self._matrix is not None:
            return self._matrix[i].copy()
        return self._row_fn(self, np.asarray([i], dtype=np.int64), None)[0]

    def submatrix(self, idx: np.ndarray) -> np.ndarray:
        """Joint probabilities over idx x idx."""
        idx = np.asarray(idx, dtype=np.int64)
        if self._matrix is not None:
            return self._matrix[np.ix_(idx, idx)]
        return self._row_fn(self, idx, idx)

    def full(self) -> np.ndarray:
        return self.submatrix(np.arange(self.N))


def _srswor_rows(N: int, n: int, pi: np.ndarray):
    off = n * (n - 1) / (N * (N - 1)) if N > 1 else 1.0

    def rows(acc: JointProbs, ridx: np.ndarray, cidx: np.ndarray | None) -> np.ndarray:
        cols = np.arange(N) if cidx is None else cidx
        out = np.full((ridx.size, cols.size), off)
        eq = ridx[:, None] == cols[None, :]
        out[eq] = pi[ridx[np.nonzero(eq)[0]]]
        return out

    return rows


def _stratified_rows(design: StratifiedDesign, pi: np.ndarray):
    labels = design.strata.labels
    sizes = design.strata.sizes
    n_h = design.n_h
    off_by_h = np.array(
        [
            n_h[h] * (n_h[h] - 1) / (sizes[h] * (sizes[h] - 1)) if sizes[h] > 1 else 1.0
            for h in range(design.strata.H)
        ]
    )

    def rows(acc: JointProbs, ridx: np.ndarray, cidx: np.ndarray | None) -> np.ndarray:
        cols = np.arange(labels.shape[0]) if cidx is None else cidx
        out = pi[ridx][:, None] * pi[cols][None, :]
        same = labels[ridx][:, None] == labels[cols][None, :]
        within = off_by_h[labels[ridx] - 1][:, None] * np.ones(cols.size)[None, :]
        out = np.where(same, within, out)
        eq = ridx[:, None] == cols[None, :]
        out[eq] = pi[ridx[np.nonzero(eq)[0]]]
        return out

    return rows


def _poisson_rows(pi: np.ndarray):
    def rows(acc: JointProbs, ridx: np.ndarray, cidx: np.ndarray | None) -> np.ndarray:
        cols = np.arange(pi.shape[0]) if cidx is None else cidx
        out = pi[ridx][:, None] * pi[cols][None, :]
        eq = ridx[:, None] == cols[None, :]
        out[eq] = pi[ridx[np.nonzero(eq)[0]]]
        return out

    return rows


def _hajek_rows(pi: np.ndarray, floor_eps: float):
    d = float(np.sum(pi * (1.0 - pi)))
    if d <= 0:
        raise ConfigError("Hajek approximation undefined: sum pi(1-pi) must be positive")

    def rows(acc: JointProbs, ridx: np.ndarray, cidx: np.ndarray | None) -> np.ndarray:
        cols = np.arange(pi.shape[0]) if cidx is None else cidx
        prod = pi[ridx][:, None] * pi[cols][None, :]
        out = prod * (1.0 - (1.0 - pi[ridx])[:, None] * (1.0 - pi[cols])[None, :] / d)
        low = out <= 0.0
        if np.any(low):
            acc.clamp_count += int(np.count_nonzero(low))
            out[low] = floor_eps * prod[low]
        eq = ridx[:, None] == cols[None, :]
        out[eq] = pi[ridx[np.nonzero(eq)[0]]]
        return out

    return rows


def joint_probs(
    design: Design,
    mode: str = "exact",
    pi: np.ndarray | None = None,
    exact_cap: int = 600,
    hajek_floor: float = 1e-6,
) -> JointProbs:
    """Build the joint-probability accessor for a design.

    ``mode`` is only meaningful for the rejective design: "exact" runs the
    pairwise symmetric-function recursion (requires N <= exact_cap),
    "approximate" uses the Hajek formula
    pi_ij = pi_i pi_j {1 - (1-pi_i)(1-pi_j)/d} with d = sum pi(1-pi).
    Approximate entries that fall to zero or below are clamped to
    ``hajek_floor * pi_i pi_j`` and counted on the accessor.  ``pi``
    overrides the first-order vector the approximation is built from
    (e.g. to stay consistent with p_bern weighting).
    """
    if isinstance(design, SRSWORDesign):
        base_pi = first_order_probs(design)
        return JointProbs(base_pi, _srswor_rows(design.N, design.n, base_pi), "exact")
    if isinstance(design, StratifiedDesign):
        base_pi = first_order_probs(design)
        return JointProbs(base_pi, _stratified_rows(design, base_pi), "exact")
    if isinstance(design, PoissonDesign):
        return JointProbs(design.pi.copy(), _poisson_rows(design.pi), "exact")
    if isinstance(design, RejectiveDesign):
        if mode == "exact":
            if design.N > exact_cap:
                raise ConfigError(
                    f"exact rejective joint probabilities limited to N <= {exact_cap} "
                    f"(got N={design.N}); use mode='approximate' or raise exact_cap"
                )
            matrix = _cps_joint_matrix(design.log_odds, design.n)
            return JointProbs(np.diag(matrix).copy(), None, "exact", matrix=matrix)
        if mode == "approximate":
            base_pi = first_order_probs(design) if pi is None else np.asarray(pi, dtype=float)
            return JointProbs(base_pi, _hajek_rows(base_pi, hajek_floor), "approximate")
        raise ConfigError(f"unknown joint-probability mode: {mode!r}")
    raise TypeError(f"unknown design type: {type(design).__name__}")


def delta_rowsum(design: Design, mode: str = "exact", pi: np.ndarray | None = None) -> float:
    """max_i sum_j |pi_ij - pi_i pi_j|, the second-order dependence scale."""
    acc = joint_probs(design, mode=mode, pi=pi)
    base = acc.pi
    best = 0.0
    for i in range(acc.N):
        row = acc.row(i)
        best = max(best, float(np.sum(np.abs(row - base[i] * base))))
    return best


# ---------------------------------------------------------------------------
# Probability rules derived from an informativeness variable.
# ---------------------------------------------------------------------------


def scaled_sigmoid_probs(
    z: np.ndarray, n: int, cap: float = 1.0 - 1e-6, max_rounds: int = 100
) -> tuple[np.ndarray, int]:
    """Probabilities proportional to 1/(1+exp(-z)), scaled to sum to n.

    When proportional scaling pushes values to 1 or above they are capped
    at ``cap`` and the remaining mass is rescaled over the free units,
    iterating until feasible.  Returns (probabilities, number of capped
    units); capping never occurs in the benchmark configuration.
    """
    z = np.asarray(z, dtype=float)
    N = z.shape[0]
    if not 1 <= n <= N:
        raise ConfigError(f"need 1 <= n <= N, got n={n}, N={N}")
    size = 1.0 / (1.0 + np.exp(-z))
    p = np.empty(N)
    capped = np.zeros(N, dtype=bool)
    for _ in range(max_rounds):
        free = ~capped
        remaining = n - cap * capped.sum()
        if remaining <= 0:
            raise ConfigError("capping exhausted the target sample size; n too small for cap")
        scale = remaining / size[free].sum()
        p[free] = scale * size[free]
        p[capped] = cap
        over = (p >= 1.0) & free
        if not over.any():
            break
        capped |= over
    else:
        raise ConfigError("sigmoid probability scaling failed to stabilize")
    if np.any((p <= 0) | (p >= 1)):
        raise ConfigError("scaled probabilities fell outside (0, 1)")
    return p, int(capped.sum())
