"""Remainder identity, bound multipliers, conditional fluctuation checks."""
import numpy as np
import pytest

from splitreg.designs import (
    PoissonDesign,
    RejectiveDesign,
    SRSWORDesign,
    StratifiedDesign,
    draw_sample,
    first_order_probs,
    scaled_sigmoid_probs,
)
from splitreg.diagnostics import (
    equivalence_study,
    fluctuation_check,
    remainder,
    srs_multiplier,
    stratified_multiplier,
    write_bound_reports,
)
from splitreg.errors import ConfigError
from splitreg.estimators import diff_oracle, sreg
from splitreg.folds import assign_folds
from splitreg.popgen import PopulationConfig, assign_strata, generate_population
from splitreg.regfit import FitSpec

OLS = FitSpec(method="ols")


def make_draw(design, pop, K=3, seed=0):
    pi = first_order_probs(design)
    fa = assign_folds(pop.N, K, np.random.default_rng(seed + 50))
    sample = draw_sample(design, np.random.default_rng(seed + 90))
    report = sreg(pop.x, pop.y[sample.indices], sample, pi, OLS, fa)
    return pi, fa, sample, report


# -- remainder ---------------------------------------------------------------


def test_remainder_zero_when_predictions_equal_oracle():
    pop = generate_population(PopulationConfig(N=40, p=3, s=2, seed=0))
    design = SRSWORDesign(N=40, n=12)
    pi, fa, sample, report = make_draw(design, pop)
    internals = report.internals
    internals.oof_predictions = pop.m_oracle.copy()
    total, per_fold = remainder(internals, pop.m_oracle, sample, pi)
    assert total == 0.0
    assert np.array_equal(per_fold, np.zeros(fa.K))


def test_remainder_zero_under_census():
    pop = generate_population(PopulationConfig(N=30, p=3, s=2, seed=1))
    design = PoissonDesign(pi=np.ones(30))
    pi, fa, sample, report = make_draw(design, pop)
    total, per_fold = remainder(report.internals, pop.m_oracle, sample, pi)
    assert total == pytest.approx(0.0, abs=1e-9)


def designs_for_identity():
    pop = generate_population(PopulationConfig(N=50, p=4, s=2, seed=2))
    strata = assign_strata(pop, 2)
    p_rej, _ = scaled_sigmoid_probs(pop.z, 15)
    return pop, [
        SRSWORDesign(N=50, n=15),
        StratifiedDesign(strata=strata, n_h=np.array([7, 8])),
        PoissonDesign(pi=np.full(50, 0.3)),
        RejectiveDesign(p_bern=p_rej, n=15),
    ]


def test_remainder_identity_across_designs():
    pop, designs = designs_for_identity()
    for d, design in enumerate(designs):
        for rep in range(5):
            pi, fa, sample, report = make_draw(design, pop, seed=10 * d + rep)
            t_diff = diff_oracle(pop, sample, pi).point
            total, per_fold = remainder(report.internals, pop.m_oracle, sample, pi)
            assert abs((report.point - t_diff) - total) <= 1e-10 * (1 + abs(report.point))
            assert total == pytest.approx(per_fold.sum(), rel=1e-12)


# -- multipliers ---------------------------------------------------------------


def test_srs_multiplier_frozen_value():
    assert srs_multiplier(100, 30, 0.3) == pytest.approx(10.0 / 297.0, abs=1e-9)


def test_srs_multiplier_balanced_realization_drops_second_term():
    got = srs_multiplier(200, 50, 0.25)
    assert got == pytest.approx((50 * 200 / 199) / (0.25**2 * 200**2), rel=1e-12)


def test_srs_multiplier_validation():
    with pytest.raises(ConfigError):
        srs_multiplier(1, 1, 0.5)
    with pytest.raises(ConfigError):
        srs_multiplier(10, 3, 0.0)


def test_stratified_multiplier_proportional_has_no_imbalance():
    N_hk = np.array([40.0, 60.0])
    pi_h = np.array([0.25, 0.5])
    V, B = stratified_multiplier(N_hk, pi_h * N_hk, pi_h)
    assert B == 0.0
    assert V == pytest.approx(10 / (0.25**2 * 39) + 30 / (0.5**2 * 59), rel=1e-12)


def test_stratified_multiplier_single_stratum_matches_srs():
    N_k, n_k, pi = 120, 30, 0.3
    V, B = stratified_multiplier(np.array([N_k]), np.array([n_k]), np.array([pi]))
    assert (V + B) / N_k == pytest.approx(srs_multiplier(N_k, n_k, pi), rel=1e-12)


def test_stratified_multiplier_validation():
    with pytest.raises(ConfigError):
        stratified_multiplier(np.array([1.0]), np.array([1.0]), np.array([0.5]))
    with pytest.raises(ConfigError):
        stratified_multiplier(np.array([10.0]), np.array([2.0]), np.array([1.5]))
    with pytest.raises(ConfigError):
        stratified_multiplier(np.array([10.0, 5.0]), np.array([2.0]), np.array([0.5]))


# -- fluctuation check -----------------------------------------------------------


def test_fluctuation_zero_values_trivially_bounded():
    design = SRSWORDesign(N=60, n=20)
    fa = assign_folds(60, 3, np.random.default_rng(0))
    a = [np.zeros(fa.members(k).size) for k in range(1, 4)]
    reports = fluctuation_check(design, fa, a, 200, np.random.default_rng(1))
    assert all(r.lhs == 0.0 and r.satisfied for r in reports)


def test_fluctuation_srswor_constant_values_match_degenerate_moment():
    design = SRSWORDesign(N=100, n=30)
    fa = assign_folds(100, 4, np.random.default_rng(2))
    a = [np.ones(fa.members(k).size) for k in range(1, 5)]
    sample = draw_sample(design, np.random.default_rng(3))
    reports = fluctuation_check(design, fa, a, 300, np.random.default_rng(4), sample=sample)
    for r in reports:
        # The fold sum of indicators is fixed by conditioning, so D is
        # deterministic: (n_k/(N_k pi) - 1)^2 exactly, with zero MC spread.
        exact = (r.n_k / (r.N_k * 0.3) - 1.0) ** 2
        assert r.lhs == pytest.approx(exact, abs=1e-12)
        assert r.mc_se == pytest.approx(0.0, abs=1e-12)
        assert r.satisfied


def test_fluctuation_srswor_matches_conditional_moment_oracle():
    design = SRSWORDesign(N=120, n=36)
    fa = assign_folds(120, 3, np.random.default_rng(5))
    rng_a = np.random.default_rng(6)
    a = [rng_a.normal(size=fa.members(k).size) for k in range(1, 4)]
    sample = draw_sample(design, np.random.default_rng(7))
    reports = fluctuation_check(design, fa, a, 4000, np.random.default_rng(8), sample=sample)
    pi = 36 / 120
    for r, a_k in zip(reports, a):
        abar = a_k.mean()
        s2 = a_k.var(ddof=1)
        mean_d = abar * (r.n_k / (r.N_k * pi) - 1.0)
        var_d = (1.0 / (r.N_k * pi)) ** 2 * r.n_k * (1 - r.n_k / r.N_k) * s2
        exact = mean_d**2 + var_d
        assert abs(r.lhs - exact) < 4 * max(r.mc_se, 1e-12)


def test_fluctuation_poisson_centered_and_exact_moment():
    rng = np.random.default_rng(9)
    design = PoissonDesign(pi=rng.uniform(0.2, 0.8, size=90))
    fa = assign_folds(90, 3, np.random.default_rng(10))
    a = [rng.normal(size=fa.members(k).size) for k in range(1, 4)]
    reports = fluctuation_check(design, fa, a, 4000, np.random.default_rng(11))
    for r in reports:
        assert abs(r.d_mean) < 3 * r.d_mean_se
        assert abs(r.lhs - r.rhs) < 4 * max(r.mc_se, 1e-12)


def test_fluctuation_stratified_bound_holds():
    pop = generate_population(PopulationConfig(N=120, p=2, s=1, seed=12))
    strata = assign_strata(pop, 3)
    design = StratifiedDesign(strata=strata, n_h=np.array([8, 12, 16]))
    fa = assign_folds(120, 3, np.random.default_rng(13))
    rng_a = np.random.default_rng(14)
    a = [rng_a.normal(size=fa.members(k).size) for k in range(1, 4)]
    reports = fluctuation_check(design, fa, a, 600, np.random.default_rng(15))
    assert all(r.satisfied for r in reports)
    assert all(r.rhs >= r.lhs - 3 * r.mc_se for r in reports)


def test_fluctuation_rejective_runs_and_reports_cmin():
    rng = np.random.default_rng(16)
    pop = generate_population(PopulationConfig(N=80, p=2, s=1, seed=17))
    p_rej, _ = scaled_sigmoid_probs(pop.z, 24)
    design = RejectiveDesign(p_bern=p_rej, n=24)
    fa = assign_folds(80, 2, np.random.default_rng(18))
    a = [rng.normal(size=fa.members(k).size) for k in range(1, 3)]
    reports = fluctuation_check(design, fa, a, 400, np.random.default_rng(19))
    for r in reports:
        assert r.satisfied
        assert r.c_min > 0
        assert r.rhs == pytest.approx(r.lhs, rel=1e-12)


def test_fluctuation_deterministic_given_stream():
    design = SRSWORDesign(N=50, n=10)
    fa = assign_folds(50, 2, np.random.default_rng(20))
    a = [np.arange(fa.members(k).size, dtype=float) for k in range(1, 3)]
    r1 = fluctuation_check(design, fa, a, 150, np.random.default_rng(21))
    r2 = fluctuation_check(design, fa, a, 150, np.random.default_rng(21))
    assert all(x.lhs == y.lhs and x.c_min == y.c_min for x, y in zip(r1, r2))


def test_fluctuation_validation():
    design = SRSWORDesign(N=50, n=10)
    fa = assign_folds(50, 2, np.random.default_rng(22))
    a = [np.zeros(fa.members(k).size) for k in range(1, 3)]
    with pytest.raises(ConfigError):
        fluctuation_check(design, fa, a, 99, np.random.default_rng(23))
    with pytest.raises(ConfigError):
        fluctuation_check(design, fa, a[:1], 200, np.random.default_rng(24))
    bad = [np.zeros(3), np.zeros(fa.members(2).size)]
    with pytest.raises(ConfigError):
        fluctuation_check(design, fa, bad, 200, np.random.default_rng(25))


def test_bound_report_csv(tmp_path):
    design = SRSWORDesign(N=50, n=10)
    fa = assign_folds(50, 2, np.random.default_rng(26))
    a = [np.ones(fa.members(k).size) for k in range(1, 3)]
    reports = fluctuation_check(design, fa, a, 150, np.random.default_rng(27))
    path = tmp_path / "bounds.csv"
    write_bound_reports(reports, str(path), "srswor", 50, 10, 2)
    rows = path.read_text().strip().splitlines()
    assert rows[0].startswith("design,fold,N,n,K,lhs,rhs,C_min,mc_se")
    assert len(rows) == 3
    first = rows[1].split(",")
    assert first[0] == "srswor" and int(first[1]) == 1
    assert float(first[7]) == pytest.approx(reports[0].c_min)


# -- equivalence study -------------------------------------------------------------


def test_equivalence_study_shapes_and_growth():
    config = PopulationConfig(N=200, p=2, s=2, r=-0.75, seed=28)
    rows = equivalence_study(config, p_grid=[2, 6], B=4, n=60, K=3, master_seed=1)
    assert len(rows) == 4
    keys = {(r["estimator"], r["p"]) for r in rows}
    assert keys == {("GREG", 2), ("GREG", 6), ("SREG", 2), ("SREG", 6)}
    assert all(r["mean"] >= 0 and r["q90"] >= r["q50"] >= 0 for r in rows)


def test_equivalence_study_rejects_bad_b():
    with pytest.raises(ConfigError):
        equivalence_study(PopulationConfig(N=100, p=2, s=1), [2], 0)
