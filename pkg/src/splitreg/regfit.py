"""Working-model fitters: least squares and lasso.

Both fitters concentrate out an unpenalized intercept by centering, so on
degenerate systems the slope vector is the minimum-norm solution of the
centered problem and a lone training row yields the constant predictor.
The lasso solves

    min (2 n_t)^{-1} sum w_i (y_i - b0 - x_i'b)^2 + lambda ||b||_1

by cyclic coordinate descent on standardized columns (see _cd), with the
penalty grid and fold splits for cross-validation drawn inside the
training set only.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._cd import lasso_path
from .errors import ConfigError, ConvergenceError

__all__ = [
    "FixedLambda",
    "CVLambda",
    "FitSpec",
    "FitResult",
    "fit_ols",
    "fit_lasso",
    "fit_working_model",
    "predict",
    "prediction_norm_error",
]

CD_TOL = 1e-7
CD_MAX_SWEEPS = 10_000


@dataclass(frozen=True)
class FixedLambda:
    """Use one fixed penalty value."""

    lam: float

    def __post_init__(self) -> None:
        if self.lam < 0:
            raise ConfigError(f"lambda must be non-negative, got {self.lam}")


@dataclass(frozen=True)
class CVLambda:
    """Pick the penalty by K-fold cross-validation inside the training set.

    The grid is log-spaced from lambda_max (smallest penalty zeroing every
    slope) down to lambda_max * min_ratio; the minimum mean validation
    error wins, ties going to the larger penalty.
    """

    folds: int = 10
    grid_size: int = 100
    min_ratio: float = 1e-4

    def __post_init__(self) -> None:
        if self.folds < 2:
            raise ConfigError(f"CV needs at least 2 folds, got {self.folds}")
        if self.grid_size < 1:
            raise ConfigError(f"grid_size must be positive, got {self.grid_size}")
        if not 0 < self.min_ratio <= 1:
            raise ConfigError(f"min_ratio must lie in (0, 1], got {self.min_ratio}")


@dataclass(frozen=True)
class FitSpec:
    """What to fit: method, weighting, and lasso penalty rule."""

    method: str = "ols"
    weighting: str = "unweighted"
    lambda_rule: FixedLambda | CVLambda = field(default_factory=CVLambda)
    standardize: bool = True

    def __post_init__(self) -> None:
        if self.method not in ("ols", "lasso"):
            raise ConfigError(f"method must be 'ols' or 'lasso', got {self.method!r}")
        if self.weighting not in ("unweighted", "inverse_probability"):
            raise ConfigError(
                f"weighting must be 'unweighted' or 'inverse_probability', got {self.weighting!r}"
            )


@dataclass(frozen=True)
class FitResult:
    """A fitted linear prediction rule: intercept, slopes, and metadata."""

    beta0: float
    beta: np.ndarray
    method: str
    training_indices: np.ndarray | None = None
    lambda_chosen: float | None = None
    cv_lambdas: np.ndarray | None = None
    cv_errors: np.ndarray | None = None
    sweeps: int = 0

    @property
    def beta_hat(self) -> np.ndarray:
        """Intercept followed by the slopes."""
        return np.concatenate(([self.beta0], self.beta))


def _check_xy(x: np.ndarray, y: np.ndarray, weights: np.ndarray | None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ConfigError(f"incompatible shapes: x {x.shape}, y {y.shape}")
    if x.shape[0] < 1:
        raise ConfigError("at least one training row is required")
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != y.shape:
            raise ConfigError("weights must match the number of rows")
        if np.any(weights <= 0):
            raise ConfigError("weights must be positive")
        # Normalize to mean one so the per-row objective scale is n_t.
        weights = weights / weights.mean()
    return weights


def fit_ols(
    x: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray | None = None,
    training_indices: np.ndarray | None = None,
) -> FitResult:
    """Weighted least squares with an intercept, minimum-norm on ties."""
    weights = _check_xy(x, y, weights)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[0]
    w = np.ones(n) if weights is None else weights

    xbar = w @ x / n
    ybar = float(w @ y) / n
    sw = np.sqrt(w)
    xc = sw[:, None] * (x - xbar)
    yc = sw * (y - ybar)
    beta, *_ = np.linalg.lstsq(xc, yc, rcond=None)
    beta0 = ybar - float(xbar @ beta)
    return FitResult(beta0=beta0, beta=beta, method="ols", training_indices=training_indices)


def _standardized_gram(x, y, w, standardize):
    """Centered/scaled design summaries: G, q, scales, means, ybar."""
    n = x.shape[0]
    xbar = w @ x / n
    ybar = float(w @ y) / n
    xc = x - xbar
    yc = y - ybar
    if standardize:
        scale = np.sqrt(w @ (xc * xc) / n)
    else:
        scale = np.ones(x.shape[1])
    live = scale > 0
    xs = xc / np.where(live, scale, np.inf)
    xw = xs * w[:, None]
    G = xw.T @ xs / n
    q = xw.T @ yc / n
    # Degenerate (constant) columns are frozen at zero inside the kernel.
    G[~live, :] = 0.0
    G[:, ~live] = 0.0
    q[~live] = 0.0
    return G, q, scale, live, xbar, ybar


def _finish_lasso(beta_std, scale, live, xbar, ybar):
    beta = np.where(live, beta_std / np.where(live, scale, 1.0), 0.0)
    beta0 = ybar - float(xbar @ beta)
    return beta0, beta


def fit_lasso(
    x: np.ndarray,
    y: np.ndarray,
    spec: FitSpec | None = None,
    rng: np.random.Generator | None = None,
    weights: np.ndarray | None = None,
    training_indices: np.ndarray | None = None,
) -> FitResult:
    """Lasso with an unpenalized intercept; penalty fixed or chosen by CV."""
    spec = spec or FitSpec(method="lasso")
    if spec.method != "lasso":
        raise ConfigError(f"fit_lasso called with method {spec.method!r}")
    weights = _check_xy(x, y, weights)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[0]
    w = np.ones(n) if weights is None else weights

    G, q, scale, live, xbar, ybar = _standardized_gram(x, y, w, spec.standardize)
    rule = spec.lambda_rule

    if isinstance(rule, FixedLambda):
        lam = rule.lam
        grid = np.array([lam])
        betas, sweeps, ok = lasso_path(G, q, grid, CD_TOL, CD_MAX_SWEEPS)
        if not ok[0]:
            raise ConvergenceError(
                f"coordinate descent did not converge at lambda={lam:.3e} "
                f"within {CD_MAX_SWEEPS} sweeps"
            )
        beta0, beta = _finish_lasso(betas[0], scale, live, xbar, ybar)
        return FitResult(
            beta0=beta0, beta=beta, method="lasso", training_indices=training_indices,
            lambda_chosen=lam, sweeps=int(sweeps[0]),
        )

    if n < 2:
        raise ConfigError("cross-validated lasso needs at least 2 training rows")
    if rng is None:
        raise ConfigError("cross-validated lasso needs an rng for the fold split")

    lam_max = float(np.max(np.abs(q)))
    if lam_max <= 0:
        # Centered response is orthogonal to every column: all-zero slopes.
        return FitResult(
            beta0=ybar, beta=np.zeros(x.shape[1]), method="lasso",
            training_indices=training_indices, lambda_chosen=0.0,
        )
    grid = np.geomspace(lam_max, lam_max * rule.min_ratio, rule.grid_size)

    n_folds = min(rule.folds, n)
    perm = rng.permutation(n)
    cv_err = np.zeros((n_folds, grid.size))
    for f, val in enumerate(np.array_split(perm, n_folds)):
        train = np.setdiff1d(perm, val, assume_unique=True)
        xt, yt, wt = x[train], y[train], w[train]
        Gf, qf, sc_f, live_f, xb_f, yb_f = _standardized_gram(
            xt, yt, wt / wt.mean(), spec.standardize
        )
        betas, _, ok = lasso_path(Gf, qf, grid, CD_TOL, CD_MAX_SWEEPS)
        if not ok.all():
            bad = grid[~ok][0]
            raise ConvergenceError(
                f"coordinate descent did not converge at lambda={bad:.3e} in a CV fold"
            )
        for t in range(grid.size):
            b0, b = _finish_lasso(betas[t], sc_f, live_f, xb_f, yb_f)
            resid = y[val] - b0 - x[val] @ b
            cv_err[f, t] = float(np.mean(resid * resid))

    mean_err = cv_err.mean(axis=0)
    # Grid is decreasing, so argmin lands on the largest penalty among ties.
    best = int(np.argmin(mean_err))
    lam = float(grid[best])

    betas, sweeps, ok = lasso_path(G, q, grid[: best + 1], CD_TOL, CD_MAX_SWEEPS)
    if not ok[best]:
        raise ConvergenceError(
            f"coordinate descent did not converge at chosen lambda={lam:.3e}"
        )
    beta0, beta = _finish_lasso(betas[best], scale, live, xbar, ybar)
    return FitResult(
        beta0=beta0, beta=beta, method="lasso", training_indices=training_indices,
        lambda_chosen=lam, cv_lambdas=grid, cv_errors=mean_err, sweeps=int(sweeps[best]),
    )


def fit_working_model(
    x: np.ndarray,
    y: np.ndarray,
    spec: FitSpec,
    rng: np.random.Generator | None = None,
    pi: np.ndarray | None = None,
    training_indices: np.ndarray | None = None,
) -> FitResult:
    """Dispatch on spec.method; inverse-probability weighting uses 1/pi rows."""
    weights = None
    if spec.weighting == "inverse_probability":
        if pi is None:
            raise ConfigError("inverse-probability weighting requires pi for the training rows")
        weights = 1.0 / np.asarray(pi, dtype=float)
    if spec.method == "ols":
        return fit_ols(x, y, weights=weights, training_indices=training_indices)
    return fit_lasso(
        x, y, spec=spec, rng=rng, weights=weights, training_indices=training_indices
    )


def predict(fit: FitResult, x: np.ndarray) -> np.ndarray:
    """beta0 + x @ beta, validating the column count."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != fit.beta.shape[0]:
        raise ConfigError(
            f"predict expects {fit.beta.shape[0]} columns, got shape {x.shape}"
        )
    return fit.beta0 + x @ fit.beta


def prediction_norm_error(fit: FitResult, pop, index_set: np.ndarray) -> float:
    """Root mean squared gap between the rule and the true means on a set."""
    idx = np.asarray(index_set, dtype=np.int64)
    if idx.size == 0:
        raise ConfigError("prediction_norm_error needs a nonempty index set")
    gap = predict(fit, pop.x[idx]) - pop.m_oracle[idx]
    return float(np.sqrt(np.mean(gap * gap)))
