import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize, special

from trendkit.errors import ConvergenceError, DegenerateModelError
from trendkit.glm import (
    Family,
    add1_correction,
    family_from_name,
    glm_covariance,
    glm_influence,
    irls_fit,
    pearson_dispersion,
)
from trendkit.linmod import covariance, ols_fit

LOGIT = Family("binomial", "logit")
IDENT = Family("binomial", "identity")
POIS = Family("poisson", "log")


def test_intercept_logit():
    f = irls_fit(np.ones((1, 1)), [3], LOGIT, trials=[10])
    assert f.coef[0] == pytest.approx(math.log(3 / 7), abs=1e-10)
    assert f.converged


def test_intercept_poisson():
    f = irls_fit(np.ones((4, 1)), [3, 5, 4, 4], POIS)
    assert f.coef[0] == pytest.approx(math.log(4), abs=1e-10)


def test_identity_two_groups():
    X = np.column_stack([np.ones(2), [0, 1]])
    f = irls_fit(X, [1, 3], IDENT, trials=[10, 10])
    np.testing.assert_allclose(f.coef, [0.1, 0.2], atol=1e-10)


def test_identity_boundary_group():
    # zero events in the control: the fit sits on the boundary of [0, 1]
    X = np.column_stack([np.ones(2), [0, 1]])
    f = irls_fit(X, [0, 4], IDENT, trials=[20, 20])
    np.testing.assert_allclose(f.coef, [0.0, 0.2], atol=1e-10)


def test_family_names():
    assert family_from_name("binomial-logit") == LOGIT
    assert family_from_name("binomial-identity", "pearson").dispersion_mode == "pearson"
    assert family_from_name("poisson") == POIS


@pytest.mark.parametrize("y,n,expect", [((0,), (3,), (1, 5)), ((3,), (3,), (4, 5)), ((5,), (10,), (6, 12))])
def test_add1(y, n, expect):
    y2, n2 = add1_correction(y, n)
    assert (y2[0], n2[0]) == expect


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 50), st.lists(st.integers(0, 50), min_size=2, max_size=8))
def test_add1_preserves_order_equal_trials(n, ys):
    y = np.minimum(np.array(ys), n)
    trials = np.full(y.size, n)
    y2, n2 = add1_correction(y, trials)
    np.testing.assert_array_equal(np.argsort(y / trials, kind="stable"), np.argsort(y2 / n2, kind="stable"))


def test_add1_can_reorder_unequal_trials():
    # 0/1 < 1/10 before, 1/3 > 2/12 after: ordering is only guaranteed for equal trials
    y2, n2 = add1_correction([0, 1], [1, 10])
    assert y2[0] / n2[0] > y2[1] / n2[1]


def test_saturated_fit_zero_dispersion_warns():
    g = np.repeat([0, 1], 4)
    X = np.eye(2)[g]
    y = np.where(g == 0, 1, 3)
    f = irls_fit(X, y, LOGIT, trials=np.full(8, 10))
    with pytest.warns(RuntimeWarning):
        phi = pearson_dispersion(f)
    assert phi == pytest.approx(0, abs=1e-12)


def test_dispersion_requires_residual_df():
    f = irls_fit(np.eye(2), [1, 3], LOGIT, trials=[10, 10])
    with pytest.raises(DegenerateModelError):
        pearson_dispersion(f)


def test_zero_variance_fitted_means_raise():
    X = np.eye(2)[[0, 0, 1, 1]]
    f = irls_fit(X, [0, 0, 2, 5], IDENT, trials=[5, 5, 5, 5])
    with pytest.raises(DegenerateModelError):
        pearson_dispersion(f)


def test_poisson_dispersion_near_one():
    rng = np.random.default_rng(7)
    x = rng.uniform(0, 2, 10_000)
    y = rng.poisson(np.exp(0.3 + 0.5 * x))
    f = irls_fit(np.column_stack([np.ones_like(x), x]), y, POIS)
    assert abs(pearson_dispersion(f) - 1) < 0.1


def test_duplicated_data_dispersion():
    rng = np.random.default_rng(3)
    x = np.repeat(np.arange(4.0), 6)
    y = rng.poisson(2 + x) * 1.0
    X = np.column_stack([np.ones_like(x), x])
    f1 = irls_fit(X, y, POIS)
    f2 = irls_fit(np.vstack([X, X]), np.concatenate([y, y]), POIS)
    n, p = X.shape
    # chi-square doubles; only the denominator changes
    lhs = f2.pearson_dispersion * (2 * n - p) / 2
    assert lhs == pytest.approx(f1.pearson_dispersion * (n - p), rel=1e-9)


def test_pearson_scales_classic_covariance():
    rng = np.random.default_rng(5)
    x = np.repeat(np.arange(3.0), 10)
    y = rng.binomial(20, 0.2 + 0.1 * x)
    X = np.column_stack([np.ones_like(x), x])
    fixed = irls_fit(X, y, LOGIT, trials=np.full(x.size, 20))
    pear = irls_fit(X, y, Family("binomial", "logit", "pearson"), trials=np.full(x.size, 20))
    np.testing.assert_allclose(glm_covariance(pear, "classic"), pear.pearson_dispersion * glm_covariance(fixed, "classic"))
    np.testing.assert_allclose(glm_covariance(pear, "hc0"), glm_covariance(fixed, "hc0"))
    assert pear.df_residual == x.size - 2


def test_nonconvergence_raises_with_last_iterate():
    X = np.column_stack([np.ones(4), [0, 0, 1, 1]])
    with pytest.raises(ConvergenceError) as exc:
        irls_fit(X, [0, 0, 5, 5], LOGIT, trials=[5, 5, 5, 5])
    assert exc.value.last_coef is not None


def test_max_iter_respected():
    X = np.column_stack([np.ones(4), [0, 1, 2, 3]])
    with pytest.raises(ConvergenceError):
        irls_fit(X, [1, 2, 3, 5], LOGIT, trials=[10] * 4, max_iter=1)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        irls_fit(np.ones((2, 1)), [3, 1], LOGIT, trials=[2, 2])
    with pytest.raises(ValueError):
        irls_fit(np.ones((2, 1)), [1, 1], LOGIT)
    with pytest.raises(ValueError):
        irls_fit(np.ones((2, 1)), [1, 1], LOGIT, trials=[2, 2], prior_weights=[1, -1])


def _oracle_mle(X, y, m, w, kind):
    """Direct maximization of the weighted log-likelihood."""

    def nll(b):
        eta = X @ b
        if kind == "logit":
            return -np.sum(w * (y * eta - m * np.logaddexp(0, eta)))
        return -np.sum(w * (y * eta - np.exp(eta)))

    def grad(b):
        eta = X @ b
        mu = m * special.expit(eta) if kind == "logit" else np.exp(eta)
        return -X.T @ (w * (y - mu))

    res = optimize.minimize(nll, np.zeros(X.shape[1]), jac=grad, method="BFGS", options={"gtol": 1e-11})
    return res.x


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["logit", "log"]))
def test_irls_matches_likelihood_oracle(seed, link):
    rng = np.random.default_rng(seed)
    n = 40
    x = rng.uniform(-1, 1, n)
    X = np.column_stack([np.ones(n), x])
    w = rng.uniform(0.2, 1.0, n)
    if link == "logit":
        m = rng.integers(5, 30, n).astype(float)
        y = rng.binomial(m.astype(int), special.expit(-0.3 + 0.8 * x)).astype(float)
        fam = LOGIT
    else:
        m = np.ones(n)
        y = rng.poisson(np.exp(1 + 0.5 * x)).astype(float)
        fam = POIS
    fit = irls_fit(X, y, fam, trials=m if link == "logit" else None, prior_weights=w)
    ref = _oracle_mle(X, y, m, w, "logit" if link == "logit" else "log")
    np.testing.assert_allclose(fit.coef, ref, atol=1e-6)
    psi = glm_influence(fit, "hc0")
    np.testing.assert_allclose(psi.T @ psi, glm_covariance(fit, "hc0"), rtol=1e-8)
    np.testing.assert_allclose(psi.sum(axis=0), 0, atol=1e-8 * np.abs(psi).sum())


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_identity_cell_means_are_weighted_proportions(seed):
    rng = np.random.default_rng(seed)
    g = np.repeat(np.arange(4), 15)
    w = rng.uniform(0.05, 1, g.size)
    y = rng.binomial(1, 0.1 + 0.15 * g).astype(float)
    y[::15] = 1  # every group has an event
    y[1::15] = 0  # and a non-event
    fit = irls_fit(np.eye(4)[g], y, IDENT, trials=np.ones(g.size), prior_weights=w)
    props = np.array([np.sum(w[g == i] * y[g == i]) / np.sum(w[g == i]) for i in range(4)])
    np.testing.assert_allclose(fit.coef, props, atol=1e-12)


def test_large_n_binomial_matches_linear_model():
    rng = np.random.default_rng(11)
    n = 10_000
    x = rng.integers(0, 4, n).astype(float)
    # near-null effect: weighting by 1/V is then irrelevant to first order
    y = rng.binomial(1, 0.4 + 0.01 * x).astype(float)
    X = np.column_stack([np.ones(n), x])
    g = irls_fit(X, y, IDENT, trials=np.ones(n))
    lm = ols_fit(X, y)
    t_glm = g.coef[1] / math.sqrt(glm_covariance(g, "hc0")[1, 1])
    t_lm = lm.coef[1] / math.sqrt(covariance(lm, "hc0")[1, 1])
    assert abs(t_glm - t_lm) < 0.02


def test_glm_hc3_exceeds_hc0():
    rng = np.random.default_rng(2)
    x = np.repeat(np.arange(3.0), 8)
    y = rng.poisson(3 + x)
    f = irls_fit(np.column_stack([np.ones_like(x), x]), y, POIS)
    assert np.all(np.diag(glm_covariance(f, "hc3")) >= np.diag(glm_covariance(f, "hc0")))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        glm_covariance(f, "classic")
