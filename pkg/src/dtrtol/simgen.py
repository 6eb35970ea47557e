"""Generative models for the simulation study and their Monte Carlo oracles.

``GenerativeParams`` defaults reproduce the two-stage SMART-style model:
S1 ~ Bern(0.5), A1 ~ Bern(expit(xi_phi (phi10 + phi11 s1))),
S2 ~ N(delta-linear form, variance 2), A2 ~ Bern(expit(xi_phi * phi2-form)),
Y ~ Ydist(mu_Y, sigma2_eps).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy import optimize, special

from dtrtol.dtr import Stage2Fit, Trajectories, Trajectory, contrast2, policy2
from dtrtol.errors import DomainError
from dtrtol.intervals import IntervalEstimate

YDISTS = ("normal", "uniform", "t3")


def expit(x):
    return special.expit(x)


def _vec(values, size, name):
    arr = np.asarray(values, dtype=float)
    if arr.shape != (size,):
        raise DomainError(f"{name} must have {size} entries, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class GenerativeParams:
    phi1: Tuple[float, ...] = (0.3, -0.5)
    delta1: Tuple[float, ...] = (0.0, 0.5, -0.75, 0.25)
    phi2: Tuple[float, ...] = (0.0, 0.5, 0.1, -1.0, -0.1, 0.0)
    beta2: Tuple[float, ...] = (3.0, 0.0, 0.1, -0.5, -0.5, 0.0)
    psi2: Tuple[float, ...] = (1.0, 0.25, 0.5)
    xi_phi: float = 1.0
    xi_psi: float = 1.0
    sigma2_eps: float = 10.0
    ydist: str = "normal"
    #: Variance of S2 given (s1, a1); exposed so tests can shrink it.
    s2_variance: float = 2.0

    def __post_init__(self):
        for name, size in (("phi1", 2), ("delta1", 4), ("phi2", 6), ("beta2", 6), ("psi2", 3)):
            object.__setattr__(self, name, tuple(float(v) for v in _vec(getattr(self, name), size, name)))
        if not (0.0 <= self.xi_phi <= 1.0) or not (0.0 <= self.xi_psi <= 1.0):
            raise DomainError("xi_phi and xi_psi must lie in [0, 1]")
        if not self.sigma2_eps > 0:
            raise DomainError(f"sigma2_eps must be positive, got {self.sigma2_eps!r}")
        if self.ydist not in YDISTS:
            raise DomainError(f"ydist must be one of {YDISTS}, got {self.ydist!r}")
        if not self.s2_variance >= 0:
            raise DomainError("s2_variance must be nonnegative")

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @property
    def true_psi2(self) -> np.ndarray:
        return self.xi_psi * np.asarray(self.psi2)


def mu_y(params: GenerativeParams, s1, s2, a1, a2):
    """Conditional mean of Y given states and actions."""
    b = params.beta2
    p = params.psi2
    s1, s2, a1, a2 = (np.asarray(v, dtype=float) for v in (s1, s2, a1, a2))
    base = b[0] + b[1] * s1 + b[2] * a1 + b[3] * s1 * a1 + b[4] * s2 + b[5] * s2**2
    out = base + a2 * params.xi_psi * (p[0] + p[1] * a1 + p[2] * s2)
    return float(out) if out.ndim == 0 else out


def s2_mean(params: GenerativeParams, s1, a1):
    d = params.delta1
    s1 = np.asarray(s1, dtype=float)
    a1 = np.asarray(a1, dtype=float)
    return d[0] + d[1] * s1 + d[2] * a1 + d[3] * s1 * a1


def draw_errors(params: GenerativeParams, rng: np.random.Generator, size):
    """Mean-zero errors with variance sigma2_eps and the configured shape."""
    sd = math.sqrt(params.sigma2_eps)
    if params.ydist == "normal":
        return sd * rng.standard_normal(size)
    if params.ydist == "uniform":
        half = sd * math.sqrt(3.0)
        return rng.uniform(-half, half, size)
    # t with 3 df has variance 3
    return sd / math.sqrt(3.0) * rng.standard_t(3, size)


def draw_s2(params: GenerativeParams, s1, a1, rng, size=None):
    mean = s2_mean(params, s1, a1)
    return mean + math.sqrt(params.s2_variance) * rng.standard_normal(size if size is not None else np.shape(mean))


def draw_trajectories(params: GenerativeParams, n: int, rng: np.random.Generator) -> Trajectories:
    """Draw ``n`` trajectories under the exploration policy."""
    f1 = params.phi1
    f2 = params.phi2
    s1 = (rng.random(n) < 0.5).astype(np.int64)
    a1 = (rng.random(n) < expit(params.xi_phi * (f1[0] + f1[1] * s1))).astype(np.int64)
    s2 = draw_s2(params, s1, a1, rng, n)
    lin2 = f2[0] + f2[1] * s1 + f2[2] * a1 + f2[3] * s2 + f2[4] * a1 * s2 + f2[5] * s2**2
    a2 = (rng.random(n) < expit(params.xi_phi * lin2)).astype(np.int64)
    y = mu_y(params, s1, s2, a1, a2) + draw_errors(params, rng, n)
    return Trajectories(s1, a1, np.atleast_1d(s2), a2, np.atleast_1d(y))


def draw_trajectory(params: GenerativeParams, rng: np.random.Generator) -> Trajectory:
    return draw_trajectories(params, 1, rng)[0]


def true_policy2(params: GenerativeParams, a1, s2):
    """Optimal stage-2 action under the true model; ties go to 0."""
    p = params.psi2
    c = params.xi_psi * (p[0] + p[1] * np.asarray(a1, dtype=float) + p[2] * np.asarray(s2, dtype=float))
    act = (c > 0).astype(np.int64)
    return int(act) if act.ndim == 0 else act


def sample_outcomes(params: GenerativeParams, fit: Stage2Fit, s1, a1, n_mc: int, rng) -> np.ndarray:
    """Draws of Y | s1, a1 when stage 2 follows the estimated policy of ``fit``."""
    s2 = draw_s2(params, s1, a1, rng, n_mc)
    a2 = policy2(fit, a1, s2)
    return mu_y(params, s1, s2, a1, a2) + draw_errors(params, rng, n_mc)


def content_from_sample(sorted_draws: np.ndarray, lower: float, upper: float) -> float:
    """Fraction of (sorted) draws inside [lower, upper]."""
    hi = np.searchsorted(sorted_draws, upper, side="right")
    lo = np.searchsorted(sorted_draws, lower, side="left")
    return float(hi - lo) / sorted_draws.size


def optimal_width_from_sample(draws: np.ndarray, gamma: float) -> float:
    """Width between the (1 - gamma)/2 and (1 + gamma)/2 sample quantiles."""
    lo, hi = np.quantile(draws, [0.5 * (1.0 - gamma), 0.5 * (1.0 + gamma)])
    return float(hi - lo)


def oracle_content(
    params: GenerativeParams,
    fit: Stage2Fit,
    s1: int,
    a1: int,
    interval: IntervalEstimate,
    n_mc: int,
    rng: np.random.Generator,
) -> float:
    """Monte Carlo probability that Y | s1, a1 under the estimated policy falls in ``interval``."""
    draws = sample_outcomes(params, fit, s1, a1, n_mc, rng)
    return float(np.mean((draws >= interval.lower) & (draws <= interval.upper)))


def oracle_optimal_width(
    params: GenerativeParams, fit: Stage2Fit, s1: int, a1: int, gamma: float, n_mc: int, rng
) -> float:
    """Width of the shortest equal-tailed interval with content ``gamma`` (Monte Carlo)."""
    return optimal_width_from_sample(sample_outcomes(params, fit, s1, a1, n_mc, rng), gamma)


def policy_value_bias(params: GenerativeParams, fit: Stage2Fit, data) -> float:
    """Mean of a2*(estimated contrast) - a2*(true contrast) with a2 the estimated optimal action."""
    a1 = np.asarray(data.a1 if hasattr(data, "a1") else data.base.a1, dtype=float)
    s2 = np.asarray(data.s2 if hasattr(data, "s2") else data.base.s2, dtype=float)
    a_hat = policy2(fit, a1, s2)
    p = params.psi2
    true_c = params.xi_psi * (p[0] + p[1] * a1 + p[2] * s2)
    return float(np.mean(a_hat * contrast2(fit, a1, s2) - a_hat * true_c))


# --------------------------------------------------------------------------
# Two-component mixture model
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MixtureParams:
    """M ~ Bern(p_match); Y | M=m ~ N(mu_m, sigma_m). Sigmas are SDs."""

    mu1: float = 0.0
    sigma1: float = 1.0
    mu0: float = 0.0
    sigma0: float = 1.0
    p_match: float = 0.5

    def __post_init__(self):
        if not (self.sigma0 > 0 and self.sigma1 > 0):
            raise DomainError("mixture component SDs must be positive")
        if not (0.0 < self.p_match < 1.0):
            raise DomainError("p_match must lie in (0, 1)")


def draw_mixture(params: MixtureParams, rng: np.random.Generator, size=None):
    """Draw (m, y) pairs from the mixture."""
    n = 1 if size is None else size
    m = (rng.random(n) < params.p_match).astype(np.int64)
    mu = np.where(m == 1, params.mu1, params.mu0)
    sd = np.where(m == 1, params.sigma1, params.sigma0)
    y = mu + sd * rng.standard_normal(n)
    if size is None:
        return int(m[0]), float(y[0])
    return m, y


def _npdf(y, mu, sd):
    z = (np.asarray(y, dtype=float) - mu) / sd
    return np.exp(-0.5 * z * z) / (sd * math.sqrt(2.0 * math.pi))


def mixture_pdf(params: MixtureParams, y):
    p = params.p_match
    return p * _npdf(y, params.mu1, params.sigma1) + (1.0 - p) * _npdf(y, params.mu0, params.sigma0)


def mixture_cdf(params: MixtureParams, y):
    p = params.p_match
    y = np.asarray(y, dtype=float)
    return p * special.ndtr((y - params.mu1) / params.sigma1) + (1.0 - p) * special.ndtr(
        (y - params.mu0) / params.sigma0
    )


def mixture_quantile(params: MixtureParams, q: float) -> float:
    lo = min(params.mu0 - 40 * params.sigma0, params.mu1 - 40 * params.sigma1)
    hi = max(params.mu0 + 40 * params.sigma0, params.mu1 + 40 * params.sigma1)
    return float(optimize.brentq(lambda v: mixture_cdf(params, v) - q, lo, hi, xtol=1e-13, rtol=1e-15))


def mixture_analytic_weights(params: MixtureParams, y_values) -> np.ndarray:
    """Importance weights f_Y(y) / f_{Y|M=1}(y) for matched draws."""
    y = np.asarray(y_values, dtype=float)
    # ratio in log space keeps far-tail values finite
    l1 = -0.5 * ((y - params.mu1) / params.sigma1) ** 2 - math.log(params.sigma1)
    l0 = -0.5 * ((y - params.mu0) / params.sigma0) ** 2 - math.log(params.sigma0)
    p = params.p_match
    return p + (1.0 - p) * np.exp(l0 - l1)
