import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levy_mv import (DegenerateInputError, InvalidInputError, LevelErrorPoint,
                     ParticleEnsemble, estimate_moment, fit_rate, mse_levels,
                     w2_coupling_bound, w2_empirical_1d, w2_exact_1d, w2_to_dirac0)
from levy_mv.measures import merge_level_points


@pytest.mark.parametrize("states, expected", [
    ([[0.0], [0.0]], 0.0),
    ([[3.0], [4.0]], math.sqrt(12.5)),
    ([[1.0, 0.0], [0.0, 1.0]], 1.0),
])
def test_w2_to_dirac0(states, expected):
    assert w2_to_dirac0(ParticleEnsemble(states)) == pytest.approx(expected, rel=1e-15)


def test_w2_to_dirac0_rejects_empty():
    with pytest.raises(InvalidInputError):
        w2_to_dirac0(np.empty((0, 1)))


def test_w2_coupling_bound_examples():
    e = np.array([[0.3], [-1.0]])
    assert w2_coupling_bound(e, e) == 0.0
    assert w2_coupling_bound([[0.0]], [[3.0]]) == 3.0
    assert w2_coupling_bound([[0.0], [1.0]], [[1.0], [0.0]]) == 1.0
    assert w2_exact_1d([0.0, 1.0], [1.0, 0.0]) == 0.0
    with pytest.raises(InvalidInputError):
        w2_coupling_bound([[0.0]], [[0.0], [1.0]])


def test_w2_exact_examples():
    assert w2_exact_1d([0.0, 2.0], [1.0, 3.0]) == 1.0
    x = np.random.default_rng(0).normal(size=17)
    assert w2_exact_1d(x, x) == 0.0
    with pytest.raises(InvalidInputError):
        w2_exact_1d([0.0], [0.0, 1.0])


def test_w2_sorted_pairing_is_optimal_and_symmetric():
    rng = np.random.default_rng(1)
    for _ in range(10_000):
        n = int(rng.integers(1, 12))
        x, y = rng.normal(size=n) * 3, rng.normal(size=n)
        w = w2_exact_1d(x, y)
        assert w >= 0
        assert w == pytest.approx(w2_exact_1d(y, x), rel=1e-12, abs=1e-15)
        assert w <= w2_coupling_bound(x, y) * (1 + 1e-12) + 1e-15


def test_w2_triangle_inequality():
    rng = np.random.default_rng(2)
    for _ in range(1_000):
        n = int(rng.integers(1, 10))
        x, y, z = (rng.standard_cauchy(size=n) for _ in range(3))
        assert w2_exact_1d(x, z) <= (w2_exact_1d(x, y) + w2_exact_1d(y, z)) * (1 + 1e-12) + 1e-12


def replicated_w2(x, y):
    # oracle: repeat each sample to the common length lcm(n, m) and pair sorted
    n, m = len(x), len(y)
    L = n * m // math.gcd(n, m)
    return w2_exact_1d(np.repeat(np.sort(x), L // n), np.repeat(np.sort(y), L // m))


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=12),
       st.lists(st.floats(-100, 100), min_size=1, max_size=12))
def test_w2_unequal_sizes_matches_replication(x, y):
    assert w2_empirical_1d(x, y) == pytest.approx(replicated_w2(x, y), rel=1e-9, abs=1e-9)


def test_w2_unequal_small_example():
    # quantiles of {0} vs {0, 2}: half the mass moves 2
    assert w2_empirical_1d([0.0], [0.0, 2.0]) == pytest.approx(math.sqrt(2.0))
    assert w2_empirical_1d([1.0, 5.0], [5.0, 1.0]) == 0.0


@pytest.mark.parametrize("ensembles, p, expected", [
    ([np.zeros((3, 1))], 1.5, 0.0),
    ([np.array([[1.0], [-1.0]])], 2, 1.0),
    ([np.array([[1.0], [3.0]])], 2, 5.0),
    ([np.array([[1.0]]), np.array([[3.0]])], 2, 5.0),
    ([np.array([[3.0, 4.0]])], 1, 5.0),
])
def test_estimate_moment(ensembles, p, expected):
    assert estimate_moment(ensembles, p) == pytest.approx(expected)


def test_estimate_moment_rejects_bad_p():
    with pytest.raises(InvalidInputError):
        estimate_moment([np.zeros((1, 1))], 0)
    with pytest.raises(InvalidInputError):
        estimate_moment([], 2)


@pytest.mark.parametrize("fine, coarse, expected", [
    ([0.3, -2.0], [0.3, -2.0], 0.0),
    ([0.0, 0.0], [1.0, -1.0], 1.0),
    ([1.0, 3.0], [2.0, 5.0], 2.5),
])
def test_mse_levels_examples(fine, coarse, expected):
    point = mse_levels(fine, coarse, level=4)
    assert point.mse == pytest.approx(expected)
    assert point.level == 4 and point.n_samples == 2


def test_mse_levels_shape_mismatch():
    with pytest.raises(InvalidInputError):
        mse_levels([1.0, 2.0], [1.0])


def test_mse_equals_moment_of_difference():
    rng = np.random.default_rng(3)
    f, c = rng.normal(size=(50, 2)), rng.normal(size=(50, 2))
    assert mse_levels(f, c).mse == pytest.approx(estimate_moment([f - c], 2), rel=1e-12)


def test_merge_level_points_is_weighted_and_associative():
    a = LevelErrorPoint(2, 1.0, 1, 10)
    b = LevelErrorPoint(2, 4.0, 1, 30)
    c = LevelErrorPoint(2, 0.5, 2, 20)
    whole = merge_level_points([a, b, c])
    assert whole.mse == pytest.approx((10 + 120 + 10) / 60)
    nested = merge_level_points([merge_level_points([a, b]), c])
    assert nested.mse == pytest.approx(whole.mse, rel=1e-15)
    assert nested.n_samples == 60 and nested.m_repetitions == 4
    with pytest.raises(InvalidInputError):
        merge_level_points([a, LevelErrorPoint(3, 1.0)])


def test_fit_rate_exact_line_in_log_space():
    fit = fit_rate([(1, 2.0 ** -2), (2, 2.0 ** -3), (3, 2.0 ** -4)])
    assert fit.beta == pytest.approx(0.5, abs=1e-12)
    assert fit.intercept == pytest.approx(-1.0, abs=1e-12)
    assert fit.residual_norm == pytest.approx(0.0, abs=1e-12)


def test_fit_rate_slope_minus_two():
    fit = fit_rate([LevelErrorPoint(1, 2.0 ** -2), LevelErrorPoint(2, 2.0 ** -4),
                    LevelErrorPoint(3, 2.0 ** -6)])
    assert fit.beta == pytest.approx(1.0, abs=1e-12)
    assert fit.residual_norm == pytest.approx(0.0, abs=1e-12)
    assert fit.predict_log2_mse(4) == pytest.approx(-8.0)


def ols_oracle(levels, mse):
    # closed-form simple regression with exact rationals on the abscissae
    xs = [Fraction(v) for v in levels]
    ys = [math.log2(v) for v in mse]
    n = len(xs)
    xbar = sum(xs) / n
    ybar = sum(ys) / n
    sxx = float(sum((x - xbar) ** 2 for x in xs))
    sxy = sum(float(x - xbar) * (y - ybar) for x, y in zip(xs, ys))
    slope = sxy / sxx
    return -slope / 2, ybar - slope * float(xbar)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(1e-12, 1e3), min_size=2, max_size=8), st.floats(1e-6, 1e6))
def test_fit_rate_matches_oracle_and_is_scale_invariant(mse, scale):
    levels = list(range(1, len(mse) + 1))
    fit = fit_rate(list(zip(levels, mse)))
    beta, intercept = ols_oracle(levels, mse)
    assert fit.beta == pytest.approx(beta, abs=1e-9)
    assert fit.intercept == pytest.approx(intercept, abs=1e-8)
    scaled = fit_rate([(lv, m * scale) for lv, m in zip(levels, mse)])
    assert scaled.beta == pytest.approx(fit.beta, abs=1e-9)
    assert scaled.residual_norm == pytest.approx(fit.residual_norm, abs=1e-9)


def test_fit_rate_errors():
    with pytest.raises(DegenerateInputError):
        fit_rate([(1, 0.5), (2, 0.0)])
    with pytest.raises(InvalidInputError):
        fit_rate([(1, 0.5)])
    with pytest.raises(InvalidInputError):
        fit_rate([(1, 0.5), (1, 0.25)])
    with pytest.raises(InvalidInputError):
        LevelErrorPoint(1, -1.0)
