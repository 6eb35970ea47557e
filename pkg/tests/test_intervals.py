"""Prediction and tolerance intervals: reductions, oracles and coverage."""

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from dtrtol import intervals, regress
from dtrtol.errors import ContractError, DomainError, InsufficientSampleError
from dtrtol.intervals import IntervalSpec
from dtrtol.statdist import WeightedSample

SPEC = IntervalSpec(alpha=0.05, gamma=0.9)


def mp_tolerance_factor(df, n_star, gamma, alpha):
    """Tolerance factor from mpmath quantiles, solved by bisection."""
    mpmath.mp.dps = 30
    lam = mpmath.mpf(1) / n_star / 2

    def ncx2(x):
        return mpmath.nsum(
            lambda j: mpmath.exp(-lam) * lam**j / mpmath.factorial(j)
            * mpmath.gammainc(mpmath.mpf(1) / 2 + j, 0, x / 2, regularized=True),
            [0, mpmath.inf],
        )

    num = mpmath.findroot(lambda x: ncx2(x) - gamma, mpmath.mpf(3))
    den = mpmath.findroot(lambda x: mpmath.gammainc(mpmath.mpf(df) / 2, 0, x / 2, regularized=True) - alpha, df)
    return float(mpmath.sqrt(df * num / den))


@pytest.mark.parametrize("n", [5, 20, 100])
def test_tolerance_factor_matches_mpmath(n):
    k = intervals.tolerance_factor(n - 1, n, SPEC)
    assert k == pytest.approx(mp_tolerance_factor(n - 1, n, 0.9, 0.05), rel=1e-10)


def test_tolerance_factor_frozen():
    # n = 10, 90% content, 95% confidence; tabled two-sided factor 2.839
    assert intervals.tolerance_factor(9, 10, SPEC) == pytest.approx(2.839, abs=5e-4)


def test_pi_normal_by_hand():
    y = np.array([1.0, 2.0, 4.0, 8.0])
    pi = intervals.pi_normal(y, SPEC)
    t = special.stdtrit(3, 0.975)
    half = t * np.std(y, ddof=1) * math.sqrt(1.25)
    assert pi.lower == pytest.approx(3.75 - half, rel=1e-12)
    assert pi.upper == pytest.approx(3.75 + half, rel=1e-12)
    assert pi.kind == intervals.PREDICTION


def test_intercept_only_regression_reduces_to_one_sample():
    rng = np.random.default_rng(0)
    y = rng.normal(3, 2, size=31)
    fit = regress.fit_ols(np.ones((31, 1)), y)
    for a, b in ((intervals.pi_regression(fit, [1.0], SPEC), intervals.pi_normal(y, SPEC)),
                 (intervals.ti_regression(fit, [1.0], SPEC), intervals.ti_normal(y, SPEC))):
        assert a.lower == pytest.approx(b.lower, abs=1e-10)
        assert a.upper == pytest.approx(b.upper, abs=1e-10)


def test_pi_regression_rejects_weighted_fit():
    fit = regress.fit_wls(np.ones((5, 1)), np.arange(5.0), np.ones(5))
    with pytest.raises(ContractError):
        intervals.pi_regression(fit, [1.0], SPEC)


def test_sandwich_mode_needs_weights():
    fit = regress.fit_ols(np.ones((5, 1)), np.arange(5.0))
    with pytest.raises(ContractError):
        intervals.ti_regression(fit, [1.0], SPEC, variance_mode="sandwich")


def test_model_sandwich_unit_weights_equals_classical():
    rng = np.random.default_rng(1)
    x = np.column_stack([np.ones(40), rng.integers(0, 2, 40)])
    y = x @ [1.0, 2.0] + rng.normal(size=40)
    a = intervals.ti_regression(regress.fit_ols(x, y), [1.0, 1.0], SPEC)
    b = intervals.ti_regression(regress.fit_wls(x, y, np.ones(40)), [1.0, 1.0], SPEC, "model_sandwich")
    assert a.lower == pytest.approx(b.lower, abs=1e-10)
    assert a.upper == pytest.approx(b.upper, abs=1e-10)


def test_zero_variance_sample_gives_point_interval():
    ti = intervals.ti_normal(np.full(10, 2.5), SPEC)
    assert ti.lower == ti.upper == 2.5


def test_small_samples_rejected():
    with pytest.raises(InsufficientSampleError):
        intervals.ti_normal([1.0], SPEC)
    with pytest.raises(DomainError):
        IntervalSpec(alpha=0.0)
    with pytest.raises(DomainError):
        IntervalSpec(gamma=1.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.5, 0.99), st.floats(0.5, 0.99), st.integers(3, 200))
def test_tolerance_factor_monotone(g1, g2, n):
    lo, hi = sorted((g1, g2))
    k_lo = intervals.tolerance_factor(n - 1, n, IntervalSpec(0.05, lo))
    k_hi = intervals.tolerance_factor(n - 1, n, IntervalSpec(0.05, hi))
    assert k_lo <= k_hi + 1e-12
    # smaller alpha means more confidence and a wider interval
    assert intervals.tolerance_factor(n - 1, n, IntervalSpec(0.01, lo)) >= k_lo - 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 300))
def test_tolerance_wider_than_normal_quantile(n):
    assert intervals.tolerance_factor(n - 1, n, SPEC) > special.ndtri(0.95)


def test_ti_normal_confidence_monte_carlo():
    rng = np.random.default_rng(2)
    n, reps = 20, 4000
    hits = 0
    for _ in range(reps):
        ti = intervals.ti_normal(rng.standard_normal(n), SPEC)
        content = special.ndtr(ti.upper) - special.ndtr(ti.lower)
        hits += content >= 0.9
    # normal-theory factor is near exact; 3 binomial SEs
    assert abs(hits / reps - 0.95) < 3 * math.sqrt(0.95 * 0.05 / reps)


def test_pi_normal_coverage_monte_carlo():
    rng = np.random.default_rng(3)
    n, reps = 10, 20000
    data = rng.standard_normal((reps, n + 1))
    covered = sum(intervals.pi_normal(row[:n], SPEC).contains(row[n]) for row in data)
    assert abs(covered / reps - 0.95) < 3 * math.sqrt(0.95 * 0.05 / reps)


# --------------------------------------------------------------------------
# Wilks
# --------------------------------------------------------------------------


def brute_force_wilks(n, gamma=0.9, alpha=0.05):
    best = 0
    for r in range(1, n // 2 + 1):
        conf = 1 - mpmath.betainc(n - 2 * r + 1, 2 * r, 0, gamma, regularized=True)
        if conf > 1 - alpha:
            best = r
    return best


def test_wilks_threshold_46():
    assert intervals.wilks_ranks(46, SPEC) == 1
    with pytest.raises(InsufficientSampleError):
        intervals.wilks_ranks(45, SPEC)


@pytest.mark.parametrize("n", [46, 47, 60, 93, 100, 250, 500])
def test_wilks_matches_brute_force(n):
    assert intervals.wilks_ranks(n, SPEC) == brute_force_wilks(n)


def test_wilks_500_depth_frozen():
    assert intervals.wilks_ranks(500, SPEC) == 19


def test_ti_wilks_order_statistics():
    y = np.arange(100.0)[::-1]
    r = intervals.wilks_ranks(100, SPEC)
    ti = intervals.ti_wilks(y, SPEC)
    assert (ti.lower, ti.upper) == (r - 1.0, 100.0 - r)


def test_weighted_wilks_unit_weights_equals_unweighted():
    rng = np.random.default_rng(4)
    y = rng.normal(size=200)
    a = intervals.ti_wilks(y, SPEC)
    b = intervals.ti_wilks_weighted(WeightedSample(y, np.full(200, 3.0)), SPEC)
    assert a.lower == pytest.approx(b.lower, abs=1e-12)
    assert a.upper == pytest.approx(b.upper, abs=1e-12)


def test_weighted_wilks_invariant_to_weight_scale():
    rng = np.random.default_rng(6)
    y = rng.normal(size=300)
    w = rng.uniform(0.5, 2.0, 300)
    a = intervals.ti_wilks_weighted(WeightedSample(y, w), SPEC)
    b = intervals.ti_wilks_weighted(WeightedSample(y, 2.0 * w), SPEC)
    assert (a.lower, a.upper) == (b.lower, b.upper)


def test_weighted_wilks_low_effective_size_fails():
    y = np.arange(100.0)
    w = np.ones(100)
    w[:5] = 40.0
    with pytest.raises(InsufficientSampleError):
        intervals.ti_wilks_weighted(WeightedSample(y, w), SPEC)


def test_wilks_confidence_monte_carlo():
    rng = np.random.default_rng(5)
    n, reps = 60, 4000
    hits = 0
    for _ in range(reps):
        ti = intervals.ti_wilks(rng.uniform(size=n), SPEC)
        hits += (ti.upper - ti.lower) >= 0.9
    r = intervals.wilks_ranks(n, SPEC)
    exact = 1 - float(mpmath.betainc(n - 2 * r + 1, 2 * r, 0, 0.9, regularized=True))
    assert abs(hits / reps - exact) < 3 * math.sqrt(exact * (1 - exact) / reps)


@settings(max_examples=30, deadline=None)
@given(st.integers(46, 2000))
def test_wilks_depth_nondecreasing_in_n(n):
    assert intervals.wilks_ranks(n + 1, SPEC) >= intervals.wilks_ranks(n, SPEC)
