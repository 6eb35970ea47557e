"""Generative model and mixture model checks."""

import math

import numpy as np
import pytest
from scipy import integrate, special, stats

from dtrtol import dtr, simgen
from dtrtol.errors import DomainError
from dtrtol.intervals import IntervalEstimate, IntervalSpec

PARAMS = simgen.GenerativeParams()


def test_mu_y_by_hand():
    # 3 + 0.1 - 0.5 - 0.5 from beta, plus 1 + 0.25 + 0.5 from the treatment contrast
    assert simgen.mu_y(PARAMS, 1, 1, 1, 1) == pytest.approx(3.85, abs=1e-14)
    assert simgen.mu_y(PARAMS, 0, 0, 0, 0) == pytest.approx(3.0, abs=1e-14)


def test_xi_psi_scales_the_contrast():
    p = simgen.GenerativeParams(xi_psi=0.0)
    assert simgen.mu_y(p, 1, 1, 1, 1) == simgen.mu_y(p, 1, 1, 1, 0)


@pytest.mark.parametrize("ydist", simgen.YDISTS)
def test_error_variance(ydist):
    p = simgen.GenerativeParams(ydist=ydist, sigma2_eps=4.0)
    e = simgen.draw_errors(p, np.random.default_rng(0), 400_000)
    assert e.mean() == pytest.approx(0.0, abs=0.03)
    # t3 has infinite fourth moment, so its sample variance converges slowly
    assert e.var() == pytest.approx(4.0, rel=0.02 if ydist != "t3" else 0.1)


def test_uniform_errors_are_bounded():
    p = simgen.GenerativeParams(ydist="uniform", sigma2_eps=3.0)
    e = simgen.draw_errors(p, np.random.default_rng(1), 10_000)
    assert np.abs(e).max() <= 3.0


def test_moments_of_simulated_columns():
    n = 100_000
    data = simgen.draw_trajectories(PARAMS, n, np.random.default_rng(2))
    assert data.s1.mean() == pytest.approx(0.5, abs=4 * math.sqrt(0.25 / n))
    for s1 in (0, 1):
        p_a1 = special.expit(0.3 - 0.5 * s1)
        sel = data.s1 == s1
        assert data.a1[sel].mean() == pytest.approx(p_a1, abs=4 * math.sqrt(0.25 / sel.sum()))
    for cell in dtr.CELLS:
        sel = data.cell_mask(*cell)
        mean = simgen.s2_mean(PARAMS, *cell)
        assert data.s2[sel].mean() == pytest.approx(mean, abs=4 * math.sqrt(2.0 / sel.sum()))
        assert data.s2[sel].var() == pytest.approx(2.0, rel=0.05)


def test_draws_are_deterministic():
    a = simgen.draw_trajectories(PARAMS, 50, np.random.default_rng(3))
    b = simgen.draw_trajectories(PARAMS, 50, np.random.default_rng(3))
    np.testing.assert_array_equal(a.y, b.y)
    assert len(simgen.draw_trajectories(PARAMS, 0, np.random.default_rng(3))) == 0


def test_params_validation():
    with pytest.raises(DomainError):
        simgen.GenerativeParams(xi_phi=1.5)
    with pytest.raises(DomainError):
        simgen.GenerativeParams(ydist="cauchy")
    with pytest.raises(DomainError):
        simgen.GenerativeParams(psi2=(1.0, 2.0))


def test_true_policy_ties_go_to_zero():
    # 1 + 0.25 * 0 + 0.5 * (-2) = 0
    assert simgen.true_policy2(PARAMS, 0, -2.0) == 0
    assert simgen.true_policy2(PARAMS, 0, -1.9) == 1


def test_oracle_content_matches_closed_form_in_degenerate_model():
    # with S2 fixed at its mean the outcome is normal with known mean and variance
    p = simgen.GenerativeParams(s2_variance=0.0, sigma2_eps=1.0)
    fit = dtr.Stage2Fit(beta2=np.asarray(p.beta2), psi2=p.true_psi2)
    s2 = simgen.s2_mean(p, 0, 0)
    a2 = dtr.policy2(fit, 0, s2)
    mean = simgen.mu_y(p, 0, s2, 0, a2)
    ti = IntervalEstimate(mean - 1.0, mean + 1.5, "tolerance", IntervalSpec())
    content = simgen.oracle_content(p, fit, 0, 0, ti, 200_000, np.random.default_rng(4))
    exact = stats.norm.cdf(1.5) - stats.norm.cdf(-1.0)
    assert content == pytest.approx(exact, abs=4 * math.sqrt(exact * (1 - exact) / 200_000))
    width = simgen.oracle_optimal_width(p, fit, 0, 0, 0.9, 200_000, np.random.default_rng(5))
    assert width == pytest.approx(2 * stats.norm.ppf(0.95), rel=0.01)


def test_content_from_sample_counts_closed_interval():
    draws = np.array([0.0, 1.0, 2.0, 3.0])
    assert simgen.content_from_sample(draws, 1.0, 2.0) == 0.5
    assert simgen.content_from_sample(draws, -1.0, 10.0) == 1.0
    assert simgen.content_from_sample(draws, 0.5, 0.6) == 0.0


def test_policy_value_bias_zero_with_true_contrast():
    data = simgen.draw_trajectories(PARAMS, 500, np.random.default_rng(6))
    fit = dtr.Stage2Fit(beta2=np.asarray(PARAMS.beta2), psi2=PARAMS.true_psi2)
    assert simgen.policy_value_bias(PARAMS, fit, data) == pytest.approx(0.0, abs=1e-14)


# --------------------------------------------------------------------------
# Mixture
# --------------------------------------------------------------------------

MIX = simgen.MixtureParams(mu1=2.0, sigma1=0.5, p_match=0.5)


def test_mixture_pdf_integrates_to_cdf():
    for y in (-3.0, 0.0, 1.7, 4.0):
        val, _ = integrate.quad(lambda v: float(simgen.mixture_pdf(MIX, v)), -np.inf, y)
        assert float(simgen.mixture_cdf(MIX, y)) == pytest.approx(val, abs=1e-10)


@pytest.mark.parametrize("q", [0.001, 0.05, 0.5, 0.95, 0.999])
def test_mixture_quantile_roundtrip(q):
    assert float(simgen.mixture_cdf(MIX, simgen.mixture_quantile(MIX, q))) == pytest.approx(q, abs=1e-12)


def test_analytic_weights_are_density_ratio():
    y = np.linspace(-2, 4, 13)
    ratio = simgen.mixture_pdf(MIX, y) / stats.norm.pdf(y, 2.0, 0.5)
    np.testing.assert_allclose(simgen.mixture_analytic_weights(MIX, y), ratio, rtol=1e-12)


def test_null_mixture_weights_are_one():
    w = simgen.mixture_analytic_weights(simgen.MixtureParams(), np.linspace(-5, 5, 11))
    np.testing.assert_allclose(w, 1.0, atol=1e-15)


def test_draw_mixture_law():
    m, y = simgen.draw_mixture(MIX, np.random.default_rng(7), 50_000)
    assert m.mean() == pytest.approx(0.5, abs=0.01)
    assert stats.kstest(y, lambda v: simgen.mixture_cdf(MIX, v)).pvalue > 1e-3
    assert stats.kstest(y[m == 1], "norm", args=(2.0, 0.5)).pvalue > 1e-3
