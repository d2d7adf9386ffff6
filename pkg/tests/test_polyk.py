import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import polyk_counts_bruteforce, staggered_tumor_data, weighted_identity_wald
from trendkit.design import DoseDesign, dose_metameters, williams_contrasts
from trendkit.errors import DataError
from trendkit.inference import tukey_williams_joint
from trendkit.polyk import PolyKRecords, adjusted_counts, poly_k_weights, polyk_marginal_set, polyk_trend


def test_weight_examples():
    r = PolyKRecords([0, 0, 0], [365, 100, 730], [0, 1, 0], t_max=730)
    np.testing.assert_allclose(poly_k_weights(r, 3), [0.125, 1.0, 1.0])


def test_time_after_study_end():
    with pytest.raises(DataError):
        PolyKRecords([0, 1], [500, 800], [0, 0], t_max=730)
    with pytest.raises(DataError):
        PolyKRecords([0, 1], [500, 600], [0, 2])


def test_tmax_defaults_to_latest_death():
    assert PolyKRecords([0, 1], [500, 600], [0, 1]).t_max == 600


def test_adjusted_count_examples():
    r = PolyKRecords([0, 0, 0, 1, 1, 1, 1], [365, 365, 365, 730, 730, 730, 730], [0, 0, 0, 1, 1, 0, 0], t_max=730)
    c = adjusted_counts(r, 3)
    np.testing.assert_allclose(c.n_star, [0.375, 4.0])
    np.testing.assert_allclose(c.p_star, [0.0, 0.5])
    survivors = PolyKRecords([0, 0, 1, 1], [730] * 4, [0, 1, 1, 1])
    s = adjusted_counts(survivors, 3)
    np.testing.assert_array_equal(s.n_star, s.n)
    np.testing.assert_allclose(s.p_star, s.p_crude)


def test_invalid_k():
    r = PolyKRecords([0, 1], [5, 6], [0, 1])
    with pytest.raises(ValueError):
        poly_k_weights(r, 0)


def test_two_k_values_give_twelve_rows():
    dose, time, tumor, t_max = staggered_tumor_data()
    res = polyk_trend(PolyKRecords(dose, time, tumor, t_max), (3, 6))
    assert len(res.labels) == 12
    assert res.labels[0] == "poly-3 Tukey: arithmetic"
    assert res.labels[-1] == "poly-6 Williams: (150+75+37)/3-0"
    assert np.all(res.adjusted_p >= res.raw_p)


def test_matches_independent_weighted_oracle():
    dose, time, tumor, t_max = staggered_tumor_data()
    rec = PolyKRecords(dose, time, tumor, t_max)
    n_star, y, p_star = polyk_counts_bruteforce(dose, time, tumor, t_max, 3)
    c = adjusted_counts(rec, 3)
    np.testing.assert_allclose(c.n_star, n_star, atol=1e-12)
    np.testing.assert_allclose(c.p_star, p_star, atol=1e-12)
    mset = polyk_marginal_set(rec, 3)
    w = np.where(tumor == 1, 1.0, (time / t_max) ** 3)
    design = DoseDesign.from_unit_doses(dose)
    g = design.group_index(dose)
    meta = dose_metameters(design)
    expected = []
    for s in ("ari", "ord", "arilog"):
        X = np.column_stack([np.ones(dose.size), meta.get(s)[g]])
        expected.append(weighted_identity_wald(X, tumor.astype(float), w, [0, 1]))
    for row in williams_contrasts(design).coefficients:
        expected.append(weighted_identity_wald(np.eye(4)[g], tumor.astype(float), w, row))
    np.testing.assert_allclose(mset.estimates / mset.std_errors, expected, atol=1e-6)


def test_all_survivors_equal_unadjusted():
    dose, _, tumor, t_max = staggered_tumor_data(seed=5)
    time = np.full(dose.size, t_max)
    res = polyk_trend(PolyKRecords(dose, time, tumor, t_max), (3,))
    ref = tukey_williams_joint(tumor, dose, family="binomial-identity", trials=np.ones(dose.size))
    np.testing.assert_allclose(res.t_stats, ref.t_stats, atol=1e-10)
    np.testing.assert_allclose(res.adjusted_p, ref.adjusted_p, atol=1e-10)
    np.testing.assert_allclose(res.lower, ref.lower, atol=1e-10)


def test_small_k_approaches_crude():
    dose, time, tumor, t_max = staggered_tumor_data(seed=6)
    res = polyk_trend(PolyKRecords(dose, time, tumor, t_max), (1e-9,))
    ref = tukey_williams_joint(tumor, dose, family="binomial-identity", trials=np.ones(dose.size))
    np.testing.assert_allclose(res.t_stats, ref.t_stats, atol=1e-6)


def test_add1_keeps_zero_tumor_group_fittable():
    dose, time, tumor, t_max = staggered_tumor_data(seed=8)
    tumor = tumor.copy()
    tumor[dose == 0] = 0
    rec = PolyKRecords(dose, time, tumor, t_max)
    plain = polyk_trend(rec, (3,))
    corrected = polyk_trend(rec, (3,), add1=True)
    assert np.all(np.isfinite(plain.t_stats)) and np.all(np.isfinite(corrected.t_stats))
    # shrinking towards 1/2 makes the control rate non-zero and lowers the statistics
    assert corrected.t_stats[3] < plain.t_stats[3]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 5), st.floats(0.1, 5))
def test_weight_and_proportion_invariants(seed, k1, k2):
    dose, time, tumor, t_max = staggered_tumor_data(seed=seed, n=12)
    rec = PolyKRecords(dose, time, tumor, t_max)
    lo, hi = sorted((k1, k2))
    w_lo, w_hi = poly_k_weights(rec, lo), poly_k_weights(rec, hi)
    free_early = (tumor == 0) & (time < t_max)
    assert np.all(w_hi[free_early] <= w_lo[free_early])
    assert np.all(w_lo[time == t_max] == 1.0)
    assert np.all((w_lo > 0) & (w_lo <= 1))
    c = adjusted_counts(rec, hi)
    assert np.all(c.p_star >= c.p_crude - 1e-15)
