import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats as sps

from oracles import enumerate_signed_rank_p, exact_signed_rank_p_dp
from polyfold.errors import AllZeroDifferences, DegenerateSample, LengthMismatch, SampleTooSmall
from polyfold.stats import (approx_signed_rank_pvalue, exact_signed_rank_pvalue, shapiro_wilk,
                            signed_ranks, wilcoxon_signed_rank)

# weights of 11 men, the worked example of Shapiro & Wilk (1965): W = 0.79, significant at 1%
SW_1965 = [148, 154, 158, 160, 161, 162, 166, 170, 182, 195, 236]


def normal_quantiles(n):
    return sps.norm.ppf((np.arange(1, n + 1) - 0.375) / (n + 0.25))


# ---- Shapiro-Wilk --------------------------------------------------------

def test_shapiro_published_example():
    r = shapiro_wilk(SW_1965)
    assert round(r.statistic, 2) == 0.79
    assert r.pvalue < 0.01
    # frozen reference values
    assert r.statistic == pytest.approx(0.7888146948631716, abs=1e-8)
    assert r.pvalue == pytest.approx(0.006703814061898823, rel=1e-9)


def test_shapiro_normal_quantiles():
    r = shapiro_wilk(normal_quantiles(50))
    assert r.statistic > 0.99 and r.pvalue > 0.1


def test_shapiro_exponential():
    x = sps.expon.ppf((np.arange(1, 51) - 0.5) / 50)
    r = shapiro_wilk(x)
    assert r.pvalue < 0.01
    assert r.statistic == pytest.approx(0.8375865215648726, abs=1e-8)


@pytest.mark.parametrize("n", [3, 4, 5, 6, 7, 11, 12, 20, 50, 200, 1000])
def test_shapiro_matches_reference(n):
    rng = np.random.default_rng(n)
    for x in (rng.normal(size=n), rng.exponential(size=n), rng.uniform(size=n)):
        ours = shapiro_wilk(x)
        ref = sps.shapiro(x)
        assert ours.statistic == pytest.approx(ref.statistic, abs=1e-6)
        assert ours.pvalue == pytest.approx(ref.pvalue, abs=1e-6)


def test_shapiro_errors():
    with pytest.raises(DegenerateSample):
        shapiro_wilk([2.0] * 10)
    with pytest.raises(SampleTooSmall):
        shapiro_wilk([1.0, 2.0])
    with pytest.raises(SampleTooSmall):
        shapiro_wilk(np.arange(5001.0))


@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=3, max_size=60).filter(
    lambda x: np.ptp(x) > 1e-3))
def test_shapiro_bounds(x):
    r = shapiro_wilk(x)
    assert 0 < r.statistic <= 1
    assert 0 <= r.pvalue <= 1


# ---- Wilcoxon -----------------------------------------------------------

def test_all_zero_differences():
    with pytest.raises(AllZeroDifferences):
        wilcoxon_signed_rank([1, 2, 3, 4, 5], [1, 2, 3, 4, 5])


def test_wilcoxon_errors():
    with pytest.raises(LengthMismatch):
        wilcoxon_signed_rank([1, 2], [1])
    with pytest.raises(SampleTooSmall):
        wilcoxon_signed_rank([1, 2, 3, 4], [0, 0, 0, 0])
    with pytest.raises(ValueError):
        wilcoxon_signed_rank(np.arange(6.0), np.zeros(6), method="bogus")


def test_n6_hand_sample():
    a = np.array([12.1, 9.4, 15.0, 8.8, 11.3, 10.2])
    b = np.array([10.0, 9.9, 11.5, 9.0, 8.1, 7.2])
    # d = 2.1, -0.5, 3.5, -0.2, 3.2, 3.0 -> ranks 3, 2, 6, 1, 5, 4; T+ = 18, T- = 3
    r = wilcoxon_signed_rank(a, b)
    p_enum, stat = enumerate_signed_rank_p(list(a - b))
    assert r.n == 6 and r.statistic == stat == 3.0
    # 5 of 64 sign patterns reach T <= 3: {}, {1}, {2}, {3}, {1,2}
    assert p_enum == 2 * 5 / 64
    assert r.pvalue == p_enum


def test_matches_reference_exact():
    rng = np.random.default_rng(5)
    for n in range(5, 13):
        d = rng.normal(size=n) + 0.4
        ours = wilcoxon_signed_rank(d, np.zeros(n))
        ref = sps.wilcoxon(d, method="exact")
        assert ours.statistic == ref.statistic
        assert ours.pvalue == pytest.approx(ref.pvalue, abs=1e-12)


distinct12 = st.permutations(list(range(1, 13))).flatmap(
    lambda mags: st.lists(st.sampled_from([-1, 1]), min_size=12, max_size=12).map(
        lambda signs: [m * s * 0.37 for m, s in zip(mags, signs)]))


@given(distinct12)
def test_n12_exact_against_enumeration_and_approx(d):
    d = np.array(d)
    ranks = signed_ranks(d)[1]
    t_plus = float(ranks[d > 0].sum())
    exact = exact_signed_rank_pvalue(ranks, t_plus)
    assert exact == pytest.approx(exact_signed_rank_p_dp(int(t_plus), 12), abs=1e-15)
    assert abs(approx_signed_rank_pvalue(ranks, t_plus) - exact) < 0.01


def test_n12_approx_every_statistic():
    ranks = np.arange(1, 13, dtype=float)
    worst = max(abs(approx_signed_rank_pvalue(ranks, t) - exact_signed_rank_p_dp(t, 12)) for t in range(79))
    assert worst < 0.01


def test_n40_against_exact_distribution():
    rng = np.random.default_rng(40)
    d = rng.normal(0.2, 1.0, 40)
    r = wilcoxon_signed_rank(d, np.zeros(40))
    # untied ranks, and the null is symmetric so min(T+, T-) gives the same p
    exact = exact_signed_rank_p_dp(int(r.statistic), 40)
    assert abs(r.pvalue - exact) < 0.005


@pytest.mark.parametrize("t, alpha", [(264, 0.05), (220, 0.01)])
def test_n40_published_critical_values(t, alpha):
    # two-sided critical values of T for n = 40 from standard tables
    ranks = np.arange(1, 41, dtype=float)
    assert approx_signed_rank_pvalue(ranks, t) <= alpha + 0.0005
    assert approx_signed_rank_pvalue(ranks, t + 1) > alpha - 0.0005
    assert exact_signed_rank_p_dp(t, 40) <= alpha < exact_signed_rank_p_dp(t + 1, 40)


def test_ties_use_midranks():
    d = np.array([1.0, 1.0, -2.0, 3.0, 3.0, 3.0, -4.0, 5.0])
    _, ranks = signed_ranks(d)
    assert list(ranks) == [1.5, 1.5, 3.0, 5.0, 5.0, 5.0, 7.0, 8.0]
    r = wilcoxon_signed_rank(d, np.zeros(8))
    ref = sps.wilcoxon(d, method="approx", correction=True)
    assert 0 <= r.pvalue <= 1 and r.statistic == ref.statistic


def test_zero_differences_are_dropped():
    a = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0])
    b = a.copy()
    b[:5] -= np.array([0.5, 1.5, -2.5, 3.5, 4.5])
    r = wilcoxon_signed_rank(a, b)
    assert r.n == 5
