"""Least squares against normal-equation oracles and hand-built sandwiches."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtrtol import regress
from dtrtol.errors import ContractError, DomainError, SingularDesignError, TooFewRowsError


def _design(n, p, seed):
    rng = np.random.default_rng(seed)
    x = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
    y = x @ rng.normal(size=p) + rng.normal(size=n)
    return x, y, rng


def test_ols_matches_normal_equations():
    x, y, _ = _design(40, 4, 0)
    fit = regress.fit_ols(x, y)
    beta = np.linalg.solve(x.T @ x, x.T @ y)
    np.testing.assert_allclose(fit.coefficients, beta, rtol=1e-12)
    np.testing.assert_allclose(fit.xtx_inverse, np.linalg.inv(x.T @ x), rtol=1e-10)
    rss = np.sum((y - x @ beta) ** 2)
    assert fit.residual_sd == pytest.approx(np.sqrt(rss / 36), rel=1e-12)


def test_residuals_orthogonal_to_columns():
    x, y, _ = _design(30, 5, 1)
    fit = regress.fit_ols(x, y)
    np.testing.assert_allclose(x.T @ fit.residuals, 0.0, atol=1e-10)


def test_exact_fit_recovers_coefficients():
    x, _, _ = _design(12, 3, 2)
    beta = np.array([1.5, -2.0, 0.25])
    fit = regress.fit_ols(x, x @ beta)
    np.testing.assert_allclose(fit.coefficients, beta, atol=1e-12)
    assert fit.residual_sd == pytest.approx(0.0, abs=1e-12)


def test_wls_matches_weighted_normal_equations():
    x, y, rng = _design(25, 3, 3)
    w = rng.uniform(0.2, 3.0, 25)
    fit = regress.fit_wls(x, y, w)
    beta = np.linalg.solve(x.T @ (w[:, None] * x), x.T @ (w * y))
    np.testing.assert_allclose(fit.coefficients, beta, rtol=1e-11)
    assert fit.residual_sd == pytest.approx(np.sqrt(np.sum(w * (y - x @ beta) ** 2) / 22), rel=1e-11)


def test_wls_unit_weights_equals_ols():
    x, y, _ = _design(20, 3, 4)
    a = regress.fit_ols(x, y)
    b = regress.fit_wls(x, y, np.ones(20))
    np.testing.assert_allclose(a.coefficients, b.coefficients, atol=1e-12)
    np.testing.assert_allclose(a.xtx_inverse, b.xtx_inverse, atol=1e-12)
    assert a.residual_sd == pytest.approx(b.residual_sd, abs=1e-12)


def test_integer_weights_equal_row_replication():
    x, y, _ = _design(10, 2, 5)
    w = np.array([1, 2, 3, 1, 1, 2, 1, 4, 1, 1], dtype=float)
    wfit = regress.fit_wls(x, y, w)
    rep = np.repeat(np.arange(10), w.astype(int))
    ofit = regress.fit_ols(x[rep], y[rep])
    np.testing.assert_allclose(wfit.coefficients, ofit.coefficients, atol=1e-12)


def test_singular_design_rejected():
    x = np.column_stack([np.ones(10), np.arange(10.0), 2 * np.arange(10.0)])
    with pytest.raises(SingularDesignError):
        regress.fit_ols(x, np.arange(10.0))


def test_too_few_rows():
    with pytest.raises(TooFewRowsError):
        regress.fit_ols(np.ones((2, 2)), np.ones(2))
    # n == p leaves no residual degrees of freedom
    with pytest.raises(SingularDesignError):
        regress.fit_ols(np.eye(3), np.ones(3))


def test_bad_weights_and_shapes():
    x, y, _ = _design(8, 2, 6)
    with pytest.raises(DomainError):
        regress.fit_wls(x, y, np.zeros(8))
    with pytest.raises(DomainError):
        regress.fit_ols(x, y[:-1])
    with pytest.raises(DomainError):
        regress.fit_ols(x, np.full(8, np.nan))


def test_prediction_se_by_hand():
    x, y, _ = _design(15, 3, 7)
    fit = regress.fit_ols(x, y)
    x0 = np.array([1.0, 0.5, -1.0])
    expected = fit.residual_sd * np.sqrt(x0 @ np.linalg.inv(x.T @ x) @ x0)
    assert regress.prediction_se(fit, x0) == pytest.approx(expected, rel=1e-12)


def test_huber_white_sandwich_by_hand():
    x, y, rng = _design(18, 3, 8)
    w = rng.uniform(0.5, 2.0, 18)
    fit = regress.fit_wls(x, y, w)
    bread = np.linalg.inv(x.T @ np.diag(w) @ x)
    e = y - x @ fit.coefficients
    meat = x.T @ np.diag(w * e * e * w) @ x
    np.testing.assert_allclose(regress.sandwich_covariance(fit), bread @ meat @ bread, rtol=1e-10)


def test_huber_white_five_rows_single_covariate():
    x = np.column_stack([np.ones(5), [0.0, 1.0, 2.0, 3.0, 4.0]])
    y = np.array([1.0, 2.5, 2.0, 4.5, 5.0])
    w = np.array([1.0, 2.0, 1.0, 0.5, 1.5])
    fit = regress.fit_wls(x, y, w)
    bread = np.linalg.inv(x.T @ np.diag(w) @ x)
    e = y - x @ fit.coefficients
    v = bread @ (x.T @ np.diag((w * e) ** 2) @ x) @ bread
    x0 = np.array([1.0, 2.5])
    assert regress.sandwich_prediction_se(fit, x0) == pytest.approx(np.sqrt(x0 @ v @ x0), rel=1e-10)


def test_huber_white_consistent_under_homoscedasticity():
    x, y, _ = _design(10_000, 3, 12)
    fit = regress.fit_wls(x, y, np.ones(10_000))
    x0 = np.array([1.0, 0.7, -1.2])
    assert regress.sandwich_prediction_se(fit, x0) == pytest.approx(regress.prediction_se(fit, x0), rel=0.10)


def test_model_sandwich_unit_weights_is_classical():
    x, y, _ = _design(22, 4, 9)
    fit = regress.fit_wls(x, y, np.ones(22))
    classical = fit.residual_sd**2 * np.linalg.inv(x.T @ x)
    np.testing.assert_allclose(regress.sandwich_covariance(fit, meat="model"), classical, rtol=1e-10)


@pytest.mark.parametrize("meat", ["residual", "model"])
def test_sandwich_invariant_to_weight_scale(meat):
    x, y, rng = _design(20, 2, 10)
    w = rng.uniform(0.3, 3.0, 20)
    a = regress.sandwich_covariance(regress.fit_wls(x, y, w), meat)
    b = regress.sandwich_covariance(regress.fit_wls(x, y, 7.5 * w), meat)
    np.testing.assert_allclose(a, b, rtol=1e-10)


def test_sandwich_requires_weighted_fit():
    x, y, _ = _design(10, 2, 11)
    with pytest.raises(ContractError):
        regress.sandwich_covariance(regress.fit_ols(x, y))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-5, 5), st.floats(0.1, 10))
def test_fit_equivariance(seed, shift, scale):
    x, y, _ = _design(15, 3, seed)
    base = regress.fit_ols(x, y)
    moved = regress.fit_ols(x, scale * y + shift)
    expected = scale * base.coefficients
    expected[0] += shift
    np.testing.assert_allclose(moved.coefficients, expected, rtol=1e-8, atol=1e-8)
    assert moved.residual_sd == pytest.approx(scale * base.residual_sd, rel=1e-8)
