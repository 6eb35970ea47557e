"""Prediction and tolerance interval constructors.

Normal-theory intervals (plain and regression), Wilks' distribution-free
interval and its weighted analogue. Every constructor returns an
:class:`IntervalEstimate`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from dtrtol import statdist
from dtrtol.errors import ContractError, DomainError, InsufficientSampleError
from dtrtol.regress import RegressionFit, prediction_se, sandwich_prediction_se
from dtrtol.statdist import WeightedSample

PREDICTION = "prediction"
TOLERANCE = "tolerance"

VARIANCE_MODES = ("classical", "sandwich", "model_sandwich")


@dataclass(frozen=True)
class IntervalSpec:
    """Error rate ``alpha`` (confidence 1 - alpha) and content ``gamma``."""

    alpha: float = 0.05
    gamma: float = 0.9

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        if not (0.0 < self.gamma < 1.0):
            raise DomainError(f"gamma must lie in (0, 1), got {self.gamma!r}")


@dataclass(frozen=True)
class IntervalEstimate:
    lower: float
    upper: float
    kind: str
    spec: IntervalSpec
    method_tag: str = ""

    def __post_init__(self):
        if self.lower > self.upper:
            raise DomainError(f"lower bound {self.lower} exceeds upper {self.upper}")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, y) -> np.ndarray:
        y = np.asarray(y)
        return (y >= self.lower) & (y <= self.upper)


def _sample(sample) -> np.ndarray:
    y = np.asarray(sample, dtype=float).ravel()
    if y.size < 2:
        raise InsufficientSampleError(f"need at least 2 observations, got {y.size}")
    if not np.all(np.isfinite(y)):
        raise DomainError("sample contains non-finite values")
    return y


def _centered(center, half, kind, spec, tag):
    return IntervalEstimate(float(center - half), float(center + half), kind, spec, tag)


def pi_normal(sample, spec: IntervalSpec, method_tag: str = "PI") -> IntervalEstimate:
    """Normal-theory prediction interval for one new observation."""
    y = _sample(sample)
    n = y.size
    sd = float(np.std(y, ddof=1))
    t = statdist.t_quantile(1.0 - spec.alpha / 2.0, n - 1)
    return _centered(float(np.mean(y)), t * sd * math.sqrt(1.0 + 1.0 / n), PREDICTION, spec, method_tag)


def pi_regression(fit: RegressionFit, x0, spec: IntervalSpec, method_tag: str = "PI") -> IntervalEstimate:
    """Prediction interval at ``x0`` for an unweighted linear regression."""
    if fit.weights is not None:
        raise ContractError("prediction intervals are only defined for unweighted fits")
    x0 = np.asarray(x0, dtype=float)
    lev = float(x0 @ fit.xtx_inverse @ x0)
    t = statdist.t_quantile(1.0 - spec.alpha / 2.0, fit.n - fit.p)
    half = t * fit.residual_sd * math.sqrt(1.0 + lev)
    return _centered(fit.predict(x0), half, PREDICTION, spec, method_tag)


def tolerance_factor(df: int, n_star: float, spec: IntervalSpec) -> float:
    """sqrt(df * ncx2_gamma(1, 1/n*) / chi2_alpha(df)), the half-width per SD."""
    ncp = 0.0 if math.isinf(n_star) else 1.0 / n_star
    num = statdist.noncentral_chisq_quantile(spec.gamma, 1, ncp)
    den = statdist.chisq_quantile(spec.alpha, df)
    return math.sqrt(df * num / den)


def ti_normal(sample, spec: IntervalSpec, method_tag: str = "TI") -> IntervalEstimate:
    """Approximate normal-theory tolerance interval.

    A zero-variance sample yields a zero-width interval at the mean.
    """
    y = _sample(sample)
    n = y.size
    mean = float(np.mean(y))
    sd = float(np.std(y, ddof=1))
    if sd == 0.0:
        return _centered(mean, 0.0, TOLERANCE, spec, method_tag)
    return _centered(mean, sd * tolerance_factor(n - 1, n, spec), TOLERANCE, spec, method_tag)


def wallis_n_star(fit: RegressionFit, x0, variance_mode: str = "classical") -> float:
    """Wallis' effective number of observations sigma^2_{Y|X} / se^2(yhat)."""
    if variance_mode == "classical":
        se = prediction_se(fit, x0)
    elif variance_mode == "sandwich":
        se = sandwich_prediction_se(fit, x0, meat="residual")
    elif variance_mode == "model_sandwich":
        se = sandwich_prediction_se(fit, x0, meat="model")
    else:
        raise DomainError(f"variance_mode must be one of {VARIANCE_MODES}, got {variance_mode!r}")
    if se == 0.0:
        return math.inf
    return fit.residual_sd**2 / se**2


def ti_regression(
    fit: RegressionFit,
    x0,
    spec: IntervalSpec,
    variance_mode: str = "classical",
    method_tag: str = "TI",
) -> IntervalEstimate:
    """Regression tolerance interval at ``x0`` using Wallis' n*.

    ``variance_mode`` selects how the standard error of the fitted mean is
    computed: ``classical``, ``sandwich`` (Huber-White with weights) or
    ``model_sandwich`` (weights-only sandwich, see
    :func:`dtrtol.regress.sandwich_covariance`). Both sandwich modes need a
    weighted fit.
    """
    if variance_mode != "classical" and fit.weights is None:
        raise ContractError("sandwich variance requires a weighted fit")
    x0 = np.asarray(x0, dtype=float)
    center = fit.predict(x0)
    if fit.residual_sd == 0.0:
        return _centered(center, 0.0, TOLERANCE, spec, method_tag)
    n_star = wallis_n_star(fit, x0, variance_mode)
    k = tolerance_factor(fit.n - fit.p, n_star, spec)
    return _centered(center, fit.residual_sd * k, TOLERANCE, spec, method_tag)


@lru_cache(maxsize=4096)
def _wilks_depth(n: int, alpha: float, gamma: float) -> int:
    r = 0
    while 2 * (r + 1) <= n:
        cand = r + 1
        content_ok = 1.0 - statdist.beta_cdf(gamma, n - 2 * cand + 1, 2 * cand)
        if not content_ok > 1.0 - alpha:
            break
        r = cand
    return r


def wilks_ranks(n: int, spec: IntervalSpec) -> int:
    """Largest symmetric depth r whose order-statistic interval qualifies.

    The interval (y_(r), y_(n-r+1)) is a valid tolerance interval when
    1 - I_gamma(n - 2r + 1, 2r) > 1 - alpha.
    """
    if n < 2:
        raise InsufficientSampleError(f"Wilks interval needs n >= 2, got {n}")
    r = _wilks_depth(int(n), spec.alpha, spec.gamma)
    if r == 0:
        raise InsufficientSampleError(
            f"n={n} is too small for a Wilks interval with gamma={spec.gamma}, alpha={spec.alpha}"
        )
    return r


def ti_wilks(sample, spec: IntervalSpec, method_tag: str = "NPTI") -> IntervalEstimate:
    """Wilks distribution-free tolerance interval."""
    y = np.sort(_sample(sample))
    r = wilks_ranks(y.size, spec)
    return IntervalEstimate(float(y[r - 1]), float(y[y.size - r]), TOLERANCE, spec, method_tag)


def ti_wilks_weighted(sample: WeightedSample, spec: IntervalSpec, method_tag: str = "WNPTI") -> IntervalEstimate:
    """Wilks interval on a weighted sample.

    The depth comes from the Kish effective size rounded to an integer; the
    bounds are weighted quantiles at (r - 1/2)/n_eff and 1 - (r - 1/2)/n_eff.
    """
    if not isinstance(sample, WeightedSample):
        sample = WeightedSample(np.asarray(sample, dtype=float))
    if len(sample) < 2:
        raise InsufficientSampleError(f"need at least 2 observations, got {len(sample)}")
    n_eff = sample.n_eff
    r = wilks_ranks(int(math.floor(n_eff + 0.5)), spec)
    tail = (r - 0.5) / n_eff
    lo, hi = statdist.weighted_quantile(sample, [tail, 1.0 - tail])
    return IntervalEstimate(float(lo), float(hi), TOLERANCE, spec, method_tag)
