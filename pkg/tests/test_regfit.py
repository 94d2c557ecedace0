"""Least-squares and lasso fitters against closed-form oracles."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import splitreg.regfit as regfit
from splitreg._cd import lasso_path
from splitreg.errors import ConfigError, ConvergenceError
from splitreg.popgen import PopulationConfig, generate_population
from splitreg.regfit import (
    CVLambda,
    FitSpec,
    FixedLambda,
    fit_lasso,
    fit_ols,
    fit_working_model,
    predict,
    prediction_norm_error,
)


def random_problem(n, p, seed, noise=0.0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, p))
    beta = rng.normal(size=p)
    y = 1.5 + x @ beta + noise * rng.normal(size=n)
    return x, y, beta


# -- ordinary least squares ----------------------------------------------------


def test_ols_recovers_noiseless_coefficients():
    x, y, beta = random_problem(40, 6, seed=0)
    fit = fit_ols(x, y)
    assert np.allclose(fit.beta, beta, atol=1e-8)
    assert fit.beta0 == pytest.approx(1.5, abs=1e-8)


def test_ols_duplicated_column_matches_pseudo_inverse_projection():
    # Fitted values are the projection onto span{1, X} even when X is
    # rank-deficient; compare against an explicit pinv on the 5x3 case.
    rng = np.random.default_rng(1)
    base = rng.normal(size=(5, 2))
    x = np.column_stack([base, base[:, 1]])
    y = rng.normal(size=5)
    fit = fit_ols(x, y)
    design = np.column_stack([np.ones(5), x])
    target = design @ (np.linalg.pinv(design) @ y)
    assert np.allclose(predict(fit, x), target, atol=1e-10)


def test_ols_single_row_is_constant_predictor():
    fit = fit_ols(np.array([[3.0, -2.0]]), np.array([7.5]))
    assert np.array_equal(fit.beta, np.zeros(2))
    assert fit.beta0 == 7.5


def test_ols_weighted_normal_equations():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(30, 4))
    y = rng.normal(size=30)
    w = rng.uniform(0.5, 3.0, size=30)
    fit = fit_ols(x, y, weights=w)
    resid = y - predict(fit, x)
    design = np.column_stack([np.ones(30), x])
    score = design.T @ (w / w.mean() * resid)
    assert np.max(np.abs(score)) < 1e-8 * max(1.0, np.abs(y).max())


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=5, max_value=30), st.integers(min_value=1, max_value=4),
       st.integers(min_value=0, max_value=10_000))
def test_ols_normal_equations_hold(n, p, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, p))
    y = rng.normal(size=n)
    fit = fit_ols(x, y)
    resid = y - predict(fit, x)
    design = np.column_stack([np.ones(n), x])
    assert np.max(np.abs(design.T @ resid)) < 1e-7 * max(1.0, np.abs(y).max())


def test_ols_shape_and_weight_validation():
    with pytest.raises(ConfigError):
        fit_ols(np.ones((3, 2)), np.ones(4))
    with pytest.raises(ConfigError):
        fit_ols(np.ones((3, 2)), np.ones(3), weights=np.array([1.0, -1.0, 1.0]))
    with pytest.raises(ConfigError):
        fit_ols(np.ones((0, 2)), np.ones(0))


# -- lasso ----------------------------------------------------------------------


def test_lasso_zero_penalty_matches_ols():
    x, y, _ = random_problem(25, 4, seed=3, noise=0.3)
    ols = fit_ols(x, y)
    las = fit_lasso(x, y, spec=FitSpec(method="lasso", lambda_rule=FixedLambda(0.0)))
    assert np.allclose(las.beta, ols.beta, atol=1e-6)
    assert las.beta0 == pytest.approx(ols.beta0, abs=1e-6)


def test_lasso_lambda_max_zeroes_every_slope():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(10, 4))
    y = rng.normal(size=10)
    xc = x - x.mean(axis=0)
    scale = np.sqrt((xc * xc).mean(axis=0))
    yc = y - y.mean()
    lam_max = np.max(np.abs((xc / scale).T @ yc / 10))
    # One part in 1e10 of slack absorbs operation-order roundoff in lam_max.
    for lam in (lam_max * (1 + 1e-10), 2 * lam_max):
        fit = fit_lasso(x, y, spec=FitSpec(method="lasso", lambda_rule=FixedLambda(lam)))
        assert np.array_equal(fit.beta, np.zeros(4))
        assert fit.beta0 == pytest.approx(y.mean())


def test_lasso_single_standardized_predictor_soft_thresholds():
    rng = np.random.default_rng(5)
    raw = rng.normal(size=12)
    xcol = raw - raw.mean()
    xcol /= np.sqrt((xcol * xcol).mean())
    y = rng.normal(size=12)
    q = float(xcol @ (y - y.mean()) / 12)
    lam = 0.4 * abs(q)
    fit = fit_lasso(
        xcol[:, None], y, spec=FitSpec(method="lasso", lambda_rule=FixedLambda(lam))
    )
    expect = np.sign(q) * (abs(q) - lam)
    assert fit.beta[0] == pytest.approx(expect, abs=1e-10)


def kkt_gap(x, y, fit, lam):
    """Max violation of the stationarity conditions on standardized data."""
    n = x.shape[0]
    xc = x - x.mean(axis=0)
    scale = np.sqrt((xc * xc).mean(axis=0))
    xs = xc / scale
    resid = y - predict(fit, x)
    grad = xs.T @ resid / n
    beta_std = fit.beta * scale
    gap = 0.0
    for g, b in zip(grad, beta_std):
        if b != 0:
            gap = max(gap, abs(g - lam * np.sign(b)))
        else:
            gap = max(gap, max(0.0, abs(g) - lam))
    return gap


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_lasso_kkt_residuals_small(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(50, 20)) @ (np.eye(20) + 0.3 * rng.normal(size=(20, 20)))
    beta = np.zeros(20)
    beta[:4] = rng.normal(size=4)
    y = x @ beta + 0.5 * rng.normal(size=50)
    lam = 0.1
    fit = fit_lasso(x, y, spec=FitSpec(method="lasso", lambda_rule=FixedLambda(lam)))
    assert kkt_gap(x, y, fit, lam) < 1e-5


def test_lasso_objective_non_increasing_over_sweeps():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(30, 8))
    x[:, 1] = 0.95 * x[:, 0] + 0.05 * x[:, 1]
    y = rng.normal(size=30)
    xc = x - x.mean(axis=0)
    scale = np.sqrt((xc * xc).mean(axis=0))
    xs = xc / scale
    yc = y - y.mean()
    G = xs.T @ xs / 30
    q = xs.T @ yc / 30
    lam = 0.05

    def objective(b):
        return 0.5 * b @ G @ b - q @ b + lam * np.abs(b).sum()

    prev = objective(np.zeros(8))
    for sweeps in (1, 2, 4, 8, 16):
        beta = lasso_path(G, q, np.array([lam]), 0.0, sweeps)[0][0]
        cur = objective(beta)
        assert cur <= prev + 1e-12
        prev = cur


def test_lasso_cv_deterministic_and_grid_shape():
    x, y, _ = random_problem(40, 6, seed=7, noise=1.0)
    spec = FitSpec(method="lasso", lambda_rule=CVLambda(folds=5, grid_size=30))
    a = fit_lasso(x, y, spec=spec, rng=np.random.default_rng(9))
    b = fit_lasso(x, y, spec=spec, rng=np.random.default_rng(9))
    assert a.lambda_chosen == b.lambda_chosen
    assert np.array_equal(a.beta, b.beta)
    assert a.cv_lambdas.shape == (30,)
    assert np.all(np.diff(a.cv_lambdas) < 0)
    assert a.lambda_chosen in a.cv_lambdas


def test_lasso_cv_recovers_sparse_signal():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(80, 15))
    y = x[:, 0] - 2 * x[:, 1] + 0.1 * rng.normal(size=80)
    fit = fit_lasso(x, y, spec=FitSpec(method="lasso"), rng=rng)
    assert abs(fit.beta[0] - 1) < 0.1 and abs(fit.beta[1] + 2) < 0.1
    assert np.max(np.abs(fit.beta[2:])) < 0.1


def test_lasso_constant_column_gets_zero_coefficient():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(20, 3))
    x[:, 2] = 4.0
    y = rng.normal(size=20)
    fit = fit_lasso(x, y, spec=FitSpec(method="lasso", lambda_rule=FixedLambda(0.01)))
    assert fit.beta[2] == 0.0


def test_lasso_convergence_error(monkeypatch):
    monkeypatch.setattr(regfit, "CD_MAX_SWEEPS", 1)
    rng = np.random.default_rng(11)
    x = rng.normal(size=(30, 5))
    x[:, 1] = 0.99 * x[:, 0] + 0.01 * x[:, 1]
    y = x[:, 0] + rng.normal(size=30)
    with pytest.raises(ConvergenceError):
        fit_lasso(x, y, spec=FitSpec(method="lasso", lambda_rule=FixedLambda(1e-6)))


def test_lasso_cv_requires_rng_and_rows():
    x, y, _ = random_problem(10, 3, seed=12)
    with pytest.raises(ConfigError):
        fit_lasso(x, y, spec=FitSpec(method="lasso"))
    with pytest.raises(ConfigError):
        fit_lasso(x[:1], y[:1], spec=FitSpec(method="lasso"), rng=np.random.default_rng(0))


# -- spec dispatch ----------------------------------------------------------------


def test_fit_spec_validation():
    with pytest.raises(ConfigError):
        FitSpec(method="ridge")
    with pytest.raises(ConfigError):
        FitSpec(weighting="other")
    with pytest.raises(ConfigError):
        FixedLambda(-0.1)
    with pytest.raises(ConfigError):
        CVLambda(folds=1)
    with pytest.raises(ConfigError):
        CVLambda(grid_size=0)
    with pytest.raises(ConfigError):
        CVLambda(min_ratio=0.0)


def test_working_model_inverse_probability_weighting():
    x, y, _ = random_problem(20, 3, seed=13, noise=0.5)
    pi = np.random.default_rng(14).uniform(0.2, 0.8, size=20)
    spec = FitSpec(method="ols", weighting="inverse_probability")
    via_spec = fit_working_model(x, y, spec, pi=pi)
    direct = fit_ols(x, y, weights=1.0 / pi)
    assert np.allclose(via_spec.beta, direct.beta)
    with pytest.raises(ConfigError):
        fit_working_model(x, y, spec)


# -- prediction helpers ------------------------------------------------------------


def test_predict_constant_rule():
    fit = regfit.FitResult(beta0=3.25, beta=np.zeros(2), method="ols")
    assert np.array_equal(predict(fit, np.ones((4, 2))), np.full(4, 3.25))


def test_predict_identity_rule():
    fit = regfit.FitResult(beta0=0.0, beta=np.array([0.0, 1.0]), method="ols")
    x = np.column_stack([np.zeros(5), np.arange(5.0)])
    assert np.array_equal(predict(fit, x), np.arange(5.0))


def test_predict_matches_matrix_product():
    rng = np.random.default_rng(15)
    fit = regfit.FitResult(beta0=-0.7, beta=rng.normal(size=3), method="ols")
    x = rng.normal(size=(7, 3))
    assert np.allclose(predict(fit, x), -0.7 + x @ fit.beta, atol=1e-12)


def test_predict_dimension_mismatch():
    fit = regfit.FitResult(beta0=0.0, beta=np.zeros(3), method="ols")
    with pytest.raises(ConfigError):
        predict(fit, np.ones((2, 4)))


def test_prediction_norm_error_against_direct_sum():
    pop = generate_population(PopulationConfig(N=50, p=4, s=2, seed=16))
    fit = fit_ols(pop.x, pop.y)
    idx = np.arange(10, 30)
    direct = np.sqrt(np.mean((predict(fit, pop.x[idx]) - pop.m_oracle[idx]) ** 2))
    assert prediction_norm_error(fit, pop, idx) == pytest.approx(direct, abs=1e-12)


def test_prediction_norm_error_perfect_and_shifted():
    pop = generate_population(PopulationConfig(N=30, p=3, s=2, sigma2=0.0, seed=17))
    perfect = fit_ols(pop.x, pop.y)
    assert prediction_norm_error(perfect, pop, np.arange(30)) < 1e-8
    shifted = regfit.FitResult(
        beta0=perfect.beta0 + 2.5, beta=perfect.beta, method="ols"
    )
    assert prediction_norm_error(shifted, pop, np.arange(30)) == pytest.approx(2.5, abs=1e-8)
    with pytest.raises(ConfigError):
        prediction_norm_error(perfect, pop, np.array([], dtype=np.int64))
