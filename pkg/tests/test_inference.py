import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from conftest import BUN_TABLE_T
from trendkit.errors import ZeroVarianceError
from trendkit.glm import Family
from trendkit.inference import (
    ContrastTest,
    build_marginal_set,
    downturn_guard,
    max_t_test,
    pairwise_test,
    resolve_df,
    simultaneous_bounds,
    tukey_williams_joint,
    williams_mct,
)
from trendkit.mmm import MarginalModel, MarginalSet


def test_bun_table(bun):
    dose, y = bun
    res = tukey_williams_joint(y, dose)
    assert res.labels[:3] == ("Tukey: arithmetic", "Tukey: ordinal", "Tukey: ari-logarithmic")
    assert res.labels[4] == "Williams: (1000+500)/2-0"
    np.testing.assert_allclose(res.t_stats, BUN_TABLE_T, atol=5e-4)
    assert res.df == 54
    np.testing.assert_allclose(res.adjusted_p[:4], (0.905, 0.231, 0.231, 0.760), atol=0.01)
    assert np.all(res.adjusted_p[4:] < 1e-4)
    assert res.max_index == [4]


def test_bun_plateau_bound(bun):
    dose, y = bun
    res = tukey_williams_joint(y, dose)
    j = res.row("Williams: (1000+500)/2-0")
    assert res.estimates[j] == pytest.approx(2.795, abs=1e-9)
    assert round(res.lower[j], 1) == 1.8
    williams = williams_mct(y, dose)
    np.testing.assert_allclose(williams.t_stats, BUN_TABLE_T[3:], atol=5e-4)
    # fewer comparisons, smaller critical value, tighter bound
    assert williams.critical_value < res.critical_value
    assert williams.lower[williams.row("Williams: (1000+500)/2-0")] > res.lower[j]


def test_df_rules(bun):
    dose, y = bun
    mset = build_marginal_set(y, dose)
    assert resolve_df(mset.models) == 54
    assert resolve_df(mset.models, "infinite") == math.inf
    assert resolve_df(mset.models, "fixed:40") == 40
    assert resolve_df(mset.models, 12) == 12
    assert [m.df for m in mset.models[:3]] == [58, 58, 58]
    with pytest.raises(ValueError):
        resolve_df(mset.models, "median")


def _single(t, df, n=50, seed=0):
    rng = np.random.default_rng(seed)
    psi = rng.normal(size=n)
    return MarginalModel("only", t, 1.0, psi, df)


def test_q1_t_example():
    res = max_t_test(MarginalSet((_single(2.09, 18),)))
    assert res.adjusted_p[0] == pytest.approx(stats.t(18).sf(2.09), abs=1e-12)
    assert res.adjusted_p[0] == pytest.approx(0.0255, abs=5e-4)


def test_q2_independent_example():
    a = np.r_[np.ones(10), np.zeros(10)]
    b = np.r_[np.zeros(10), np.ones(10)]
    mset = MarginalSet((MarginalModel("a", 2.0, 1.0, a), MarginalModel("b", -5.0, 1.0, b)))
    res = max_t_test(mset, df_rule="infinite")
    assert res.corr[0, 1] == 0
    assert res.adjusted_p[0] == pytest.approx(1 - special.ndtr(2.0) ** 2, abs=1e-12)
    assert res.adjusted_p[0] == pytest.approx(0.0450, abs=1e-4)


def test_q1_bounds_classical():
    m = _single(3.0, 12)
    m = MarginalModel("x", 3.0, 4.0, m.influence, 12)
    res = simultaneous_bounds(max_t_test(MarginalSet((m,)), alpha=0.1))
    assert res.lower[0] == pytest.approx(3.0 - stats.t(12).isf(0.1) * 2.0, abs=1e-12)
    half = simultaneous_bounds(max_t_test(MarginalSet((m,)), alpha=0.5))
    assert half.lower[0] == pytest.approx(3.0, abs=1e-12)


def test_less_and_two_sided_bounds(bun):
    dose, y = bun
    less = tukey_williams_joint(-y, dose, alternative="less")
    greater = tukey_williams_joint(y, dose)
    np.testing.assert_allclose(less.adjusted_p, greater.adjusted_p, atol=1e-12)
    np.testing.assert_allclose(less.upper, -greater.lower, atol=1e-9)
    assert np.all(np.isinf(less.lower))
    two = tukey_williams_joint(y, dose, alternative="two-sided")
    assert np.all(two.lower < two.estimates) and np.all(two.upper > two.estimates)
    assert two.critical_value > greater.critical_value


def test_downturn_guard_cases(bun):
    dose, y = bun
    res = tukey_williams_joint(y, dose)
    mset = build_marginal_set(y, dose)
    hv = pairwise_test(mset.models[3], "greater")
    assert hv.t_stat == pytest.approx(0.219, abs=5e-4)
    d = downturn_guard(res, hv)
    assert d.trend_significant and not d.high_vs_control_significant
    assert d.downturn_flagged and not d.monotone_trend
    both = downturn_guard(res, ContrastTest("hi", 1, 0.1, 10, 20, 1e-6))
    assert both.monotone_trend and not both.downturn_flagged
    flat = tukey_williams_joint(np.random.default_rng(3).normal(size=60), dose)
    neither = downturn_guard(flat, 0.7)
    assert not neither.monotone_trend and not neither.downturn_flagged


def test_williams_two_groups_hand_value():
    res = williams_mct([0, 2, 2, 4], [0, 0, 1, 1], vcov="classic")
    assert res.t_stats[0] == pytest.approx(math.sqrt(2), abs=1e-12)


def test_constant_response():
    with pytest.raises(ZeroVarianceError):
        williams_mct(np.ones(8), np.repeat([0, 1], 4))


def test_identical_group_means():
    y = np.tile([1.0, 2.0, 3.0], 3)
    res = williams_mct(y, np.repeat([0, 1, 2], 3))
    np.testing.assert_allclose(res.t_stats, 0, atol=1e-12)
    assert np.all(res.adjusted_p >= 0.5)


def test_linear_response_ari_dominates():
    dose = np.repeat([0, 10, 20, 40, 80.0], 6)
    # the same residual pattern in every group keeps the sandwich homoscedastic
    y = 1 + 0.05 * dose + 1e-3 * np.tile([-1.0, 1.0, -2.0, 2.0, 0.5, -0.5], 5)
    res = tukey_williams_joint(y, dose)
    assert res.labels[res.max_index[0]] == "Tukey: arithmetic"
    assert np.all(res.t_stats > 0)


def test_plateau_pooled_williams_wins():
    rng = np.random.default_rng(9)
    dose = np.repeat([0, 1, 2, 3.0], 8)
    mu = np.array([0, 1, 1, 1.0])[np.repeat(np.arange(4), 8)]
    wins = 0
    for _ in range(1000):
        y = mu + 0.05 * rng.normal(size=dose.size)
        mset = build_marginal_set(y, dose)
        t = mset.estimates / mset.std_errors
        best = mset.labels[int(np.argmax(t))]
        wins += best.startswith("Williams: (")
    assert wins / 1000 > 0.8


def test_ties_reported_together(bun):
    dose, y = bun
    res = tukey_williams_joint(y, dose, scalings=("ord", "arilog"), ctype=None)
    assert res.max_index == [0, 1]


def test_logit_effects_are_odds_ratios():
    rng = np.random.default_rng(2)
    dose = np.repeat([0, 1, 2, 4.0], 10)
    m = np.full(dose.size, 20.0)
    y = rng.binomial(20, 0.1 + 0.08 * dose).astype(float)
    res = tukey_williams_joint(y, dose, family="binomial-logit", trials=m, ctype="dunnett")
    assert res.effect_scale == "odds_ratio"
    eff, lo, _ = res.effects()
    np.testing.assert_allclose(eff, np.exp(res.estimates))
    np.testing.assert_allclose(lo, np.exp(res.lower))
    assert res.df == math.inf
    pear = tukey_williams_joint(y, dose, family=Family("binomial", "logit", "pearson"), trials=m)
    assert pear.df == dose.size - 4


def _bun_like(seed, n_per=(5, 5, 5, 5)):
    rng = np.random.default_rng(seed)
    dose = np.repeat([0, 5, 10, 20.0][: len(n_per)], n_per)
    y = 10 + 0.1 * dose + rng.gamma(2.0, 1.0, size=dose.size)
    return dose, y


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-50, 50), st.floats(0.01, 100))
def test_affine_invariance(seed, shift, scale):
    dose, y = _bun_like(seed)
    base = tukey_williams_joint(y, dose)
    moved = tukey_williams_joint(scale * y + shift, dose)
    np.testing.assert_allclose(moved.t_stats, base.t_stats, rtol=1e-8, atol=1e-8)
    np.testing.assert_allclose(moved.adjusted_p, base.adjusted_p, atol=1e-12)
    np.testing.assert_allclose(moved.corr, base.corr, atol=1e-10)
    np.testing.assert_allclose(moved.lower, scale * base.lower, rtol=1e-8, atol=1e-9 * scale)
