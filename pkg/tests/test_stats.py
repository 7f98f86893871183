# tests/test_stats.py
import numpy as np
import pytest
from scipy import integrate, stats

from src.core.errors import DataError
from src.numerics.stats import Alternative, describe, percentile, student_t_cdf, welch_t_test_one_sided


def test_percentile_linear_interpolation():
    assert percentile([1, 2, 3, 4], 0.5) == 2.5
    assert percentile(list(range(101)), 0.99) == pytest.approx(99.0)
    assert percentile([7.0], 0.99) == 7.0
    assert percentile([4, 1, 3, 2], 0.0) == 1.0
    with pytest.raises(DataError):
        percentile([], 0.5)
    with pytest.raises(DataError):
        percentile([1, 2], 1.5)


def test_describe():
    d = describe([1, 2, 3, 4, 5])
    assert (d.n, d.mean, d.var) == (5, 3.0, 2.5)
    with pytest.raises(DataError):
        describe([1.0])


@pytest.mark.parametrize("t", [-4.0, -1.0, -0.2, 0.0, 0.7, 2.5])
@pytest.mark.parametrize("df", [1.0, 3.5, 8.0, 40.0])
def test_student_t_cdf_matches_scipy(t, df):
    assert student_t_cdf(t, df) == pytest.approx(stats.t.cdf(t, df), abs=1e-12)


def test_student_t_cdf_against_numeric_integration():
    area, _ = integrate.quad(lambda x: stats.t.pdf(x, 5.3), -np.inf, 1.3)
    assert student_t_cdf(1.3, 5.3) == pytest.approx(area, abs=1e-8)
    assert student_t_cdf(float("inf"), 3) == 1.0
    assert student_t_cdf(float("-inf"), 3) == 0.0
    with pytest.raises(DataError):
        student_t_cdf(0.0, 0)


def test_welch_small_example():
    res = welch_t_test_one_sided([1, 2, 3, 4, 5], [2, 3, 4, 5, 6], Alternative.MEAN_A_LESS)
    assert res.t_stat == pytest.approx(-1.0)
    assert res.df == pytest.approx(8.0)
    assert res.p_value == pytest.approx(0.1733, abs=1e-4)
    greater = welch_t_test_one_sided([1, 2, 3, 4, 5], [2, 3, 4, 5, 6], Alternative.MEAN_A_GREATER)
    assert greater.p_value == pytest.approx(1.0 - res.p_value)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("pooled", [False, True])
def test_welch_matches_scipy(seed, pooled):
    rng = np.random.default_rng(seed)
    a = rng.normal(10, 2, size=12)
    b = rng.normal(11, 4, size=17)
    for alternative, name in ((Alternative.MEAN_A_LESS, "less"), (Alternative.MEAN_A_GREATER, "greater")):
        ours = welch_t_test_one_sided(a, b, alternative, pooled=pooled)
        ref = stats.ttest_ind(a, b, equal_var=pooled, alternative=name)
        assert ours.t_stat == pytest.approx(ref.statistic, rel=1e-9)
        assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-7, abs=1e-12)


def test_degenerate_and_constant_samples():
    res = welch_t_test_one_sided([3, 3, 3], [3, 3], Alternative.MEAN_A_LESS)
    assert res.degenerate
    assert (res.t_stat, res.p_value) == (0.0, 0.5)

    res = welch_t_test_one_sided([1, 1], [2, 2], Alternative.MEAN_A_LESS)
    assert not res.degenerate
    assert res.t_stat == float("-inf")
    assert res.p_value == 0.0
    assert welch_t_test_one_sided([1, 1], [2, 2], Alternative.MEAN_A_GREATER).p_value == 1.0


def test_needs_two_values_per_sample():
    with pytest.raises(DataError):
        welch_t_test_one_sided([1.0], [1.0, 2.0], Alternative.MEAN_A_LESS)


@pytest.mark.slow
def test_false_positive_rate_under_the_null():
    rng = np.random.default_rng(11)
    trials = 2000
    rejections = 0
    for _ in range(trials):
        a = rng.poisson(5, size=20)
        b = rng.poisson(5, size=20)
        rejections += welch_t_test_one_sided(a, b, Alternative.MEAN_A_LESS).p_value < 0.05
    assert 0.03 <= rejections / trials <= 0.07
