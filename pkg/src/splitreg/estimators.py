"""Total estimators and the cross-fitted variance estimator.

All point estimators share one correction pattern: a population prediction
total plus an inverse-probability-weighted sum of sample residuals.  They
differ in where the prediction rule comes from: the true mean function
(oracle difference), a fit on all sampled units (GREG), or per-fold fits
on out-of-fold sampled units (SREG).  The SREG report caches the per-unit
out-of-fold predictions so the variance estimator and the diagnostics see
exactly the residuals the point estimate used.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .designs import DrawnSample, JointProbs
from .errors import ConfigError, FoldTrainingError, JointProbabilityError
from .folds import FoldAssignment, fold_partition
from .popgen import Population
from .regfit import FitResult, FitSpec, fit_working_model, predict

__all__ = [
    "EstimateReport",
    "GregInternals",
    "SregInternals",
    "ht_total",
    "diff_oracle",
    "greg",
    "sreg",
    "ht_variance_general",
    "sreg_variance",
    "confidence_interval",
]


@dataclass
class GregInternals:
    """Fit and in-sample residuals backing a GREG estimate."""

    fit: FitResult
    insample_residuals: np.ndarray  # aligned with sample.indices


@dataclass
class SregInternals:
    """Per-fold fits plus population-wide out-of-fold predictions.

    ``oof_predictions[i]`` is the prediction for unit i from the fit that
    excluded i's fold; defined for every population unit.
    ``oof_residuals[i]`` is y_i minus that prediction, defined (non-NaN)
    only for sampled units.
    """

    fold_assignment: FoldAssignment
    fits: list[FitResult]
    oof_predictions: np.ndarray
    oof_residuals: np.ndarray
    fold_totals: np.ndarray


@dataclass
class EstimateReport:
    """Point estimate with optional variance and confidence interval."""

    estimator_name: str
    point: float
    variance: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    degenerate_variance: bool = False
    internals: object | None = None


def _sampled_pi(sample: DrawnSample, pi: np.ndarray) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.shape[0] != sample.indicators.shape[0]:
        raise ConfigError("pi must cover the whole population")
    pis = pi[sample.indices]
    if np.any(pis <= 0):
        raise ConfigError("every sampled unit needs a positive inclusion probability")
    return pis


def _sampled_values(values: np.ndarray, sample: DrawnSample, what: str) -> np.ndarray:
    """Accept either per-sample values (aligned with sample.indices) or per-unit."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] == sample.n_realized:
        return values
    if values.shape[0] == sample.indicators.shape[0]:
        return values[sample.indices]
    raise ConfigError(f"{what} must have length n_realized or N")


def ht_total(sample: DrawnSample, pi: np.ndarray, y_sampled: np.ndarray) -> EstimateReport:
    """Inverse-probability-weighted total of the sampled outcomes."""
    pis = _sampled_pi(sample, pi)
    y = _sampled_values(y_sampled, sample, "y_sampled")
    return EstimateReport(estimator_name="HT", point=float(np.sum(y / pis)))


def diff_oracle(pop: Population, sample: DrawnSample, pi: np.ndarray) -> EstimateReport:
    """Prediction total from the true mean function plus HT residual correction."""
    pis = _sampled_pi(sample, pi)
    resid = pop.y[sample.indices] - pop.m_oracle[sample.indices]
    point = float(np.sum(pop.m_oracle) + np.sum(resid / pis))
    return EstimateReport(estimator_name="Diff", point=point)


def greg(
    x_all: np.ndarray,
    y_sampled: np.ndarray,
    sample: DrawnSample,
    pi: np.ndarray,
    spec: FitSpec,
    rng: np.random.Generator | None = None,
    name: str = "GREG",
) -> EstimateReport:
    """Fit one rule on all sampled units, then correct its population total."""
    if sample.n_realized == 0:
        raise ConfigError("GREG needs at least one sampled unit")
    pis = _sampled_pi(sample, pi)
    y = _sampled_values(y_sampled, sample, "y_sampled")
    fit = fit_working_model(
        x_all[sample.indices], y, spec, rng=rng, pi=pis, training_indices=sample.indices
    )
    m_hat = predict(fit, x_all)
    resid = y - m_hat[sample.indices]
    point = float(np.sum(m_hat) + np.sum(resid / pis))
    return EstimateReport(
        estimator_name=name,
        point=point,
        internals=GregInternals(fit=fit, insample_residuals=resid),
    )


def sreg(
    x_all: np.ndarray,
    y_sampled: np.ndarray,
    sample: DrawnSample,
    pi: np.ndarray,
    spec: FitSpec,
    fold_assignment: FoldAssignment,
    rng: np.random.Generator | None = None,
    name: str = "SREG",
) -> EstimateReport:
    """K-fold cross-fitted regression estimator of the total.

    Fold k's rule is trained on sampled units OUTSIDE fold k, predicts all
    of fold k's population units, and is corrected by the HT sum of fold
    k's sample residuals.  The fold totals add up to the estimate.
    """
    N = x_all.shape[0]
    if fold_assignment.labels.shape[0] != N:
        raise ConfigError("fold assignment does not match the population size")
    pis_full = np.asarray(pi, dtype=float)
    pis = _sampled_pi(sample, pi)
    y = _sampled_values(y_sampled, sample, "y_sampled")

    y_by_unit = np.full(N, np.nan)
    y_by_unit[sample.indices] = y

    # Independent child seeds per fold keep lasso CV splits reproducible
    # regardless of fold evaluation order.
    child_seeds = (
        rng.integers(0, 2**63 - 1, size=fold_assignment.K) if rng is not None else None
    )

    oof_pred = np.full(N, np.nan)
    oof_resid = np.full(N, np.nan)
    fits: list[FitResult] = []
    fold_totals = np.empty(fold_assignment.K)

    for part in fold_partition(fold_assignment, sample):
        k = part.k
        in_fold = np.zeros(N, dtype=bool)
        in_fold[part.population_units] = True
        train_idx = sample.indices[~in_fold[sample.indices]]
        if train_idx.size == 0:
            raise FoldTrainingError(
                f"fold {k} leaves no sampled units to train on; use fewer folds"
            )
        # Honesty audit: the training view must not touch this fold.
        assert np.intersect1d(train_idx, part.population_units).size == 0

        child = (
            np.random.default_rng(int(child_seeds[k - 1])) if child_seeds is not None else None
        )
        fit = fit_working_model(
            x_all[train_idx],
            y_by_unit[train_idx],
            spec,
            rng=child,
            pi=pis_full[train_idx],
            training_indices=train_idx,
        )
        fits.append(fit)

        preds = predict(fit, x_all[part.population_units])
        oof_pred[part.population_units] = preds

        resid_sum = 0.0
        if part.n_k > 0:
            r = y_by_unit[part.sampled_units] - oof_pred[part.sampled_units]
            oof_resid[part.sampled_units] = r
            resid_sum = float(np.sum(r / pis_full[part.sampled_units]))
        fold_totals[k - 1] = float(np.sum(preds)) + resid_sum

    return EstimateReport(
        estimator_name=name,
        point=float(np.sum(fold_totals)),
        internals=SregInternals(
            fold_assignment=fold_assignment,
            fits=fits,
            oof_predictions=oof_pred,
            oof_residuals=oof_resid,
            fold_totals=fold_totals,
        ),
    )


def ht_variance_general(
    a_sampled: np.ndarray, sample: DrawnSample, pi: np.ndarray, joint: JointProbs
) -> float:
    """Quadratic-form variance estimator for an HT total of the values a.

    V = sum_{i,j in A} {(pi_ij - pi_i pi_j)/pi_ij} (a_i/pi_i)(a_j/pi_j).
    May be negative under approximate joint probabilities; callers decide
    how to flag that.
    """
    pis = _sampled_pi(sample, pi)
    a = _sampled_values(a_sampled, sample, "a_sampled")
    sub = joint.submatrix(sample.indices)
    if np.any(sub <= 0):
        raise JointProbabilityError(
            "a sampled pair has zero joint inclusion probability; the variance "
            "estimator requires strictly positive pairwise inclusion probabilities"
        )
    w = a / pis
    coef = 1.0 - np.outer(pis, pis) / sub
    return float(w @ coef @ w)


def sreg_variance(
    report: EstimateReport, sample: DrawnSample, pi: np.ndarray, joint: JointProbs
) -> float:
    """Variance of the cross-fitted estimator from its out-of-fold residuals."""
    internals = report.internals
    if not isinstance(internals, SregInternals):
        raise ConfigError("report does not carry cross-fitted internals")
    resid = internals.oof_residuals[sample.indices]
    if np.any(np.isnan(resid)):
        raise ConfigError("out-of-fold residuals are missing for some sampled units")
    return ht_variance_general(resid, sample, pi, joint)


def confidence_interval(
    point: float, variance: float, level: float = 0.95
) -> tuple[float, float]:
    """Normal-quantile interval; NaN bounds flag a negative variance."""
    if not 0 < level < 1:
        raise ConfigError(f"level must lie in (0, 1), got {level}")
    if variance < 0 or np.isnan(variance):
        return (float("nan"), float("nan"))
    half = norm.ppf(0.5 * (1.0 + level)) * np.sqrt(variance)
    return (point - half, point + half)
