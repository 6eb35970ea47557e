"""Distribution functions, kernel density estimates and weighted quantiles.

The central special functions (Student-t and chi-square quantiles, the
regularized incomplete beta) are thin wrappers over ``scipy.special``. The
noncentral chi-square CDF is summed here as a Poisson mixture of central
chi-square CDFs, since only tiny noncentralities (1/n) ever occur.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from dtrtol.errors import DegenerateSampleError, DomainError, NumericError

SQRT_2PI = math.sqrt(2.0 * math.pi)

#: Poisson tail mass at which the noncentral chi-square series stops.
NCX2_TAIL_TOL = 1e-14
#: Hard cap on series terms before giving up.
NCX2_MAX_TERMS = 100_000


def _check_prob(p, name="p"):
    if not (0.0 < p < 1.0) or math.isnan(p):
        raise DomainError(f"{name} must lie strictly inside (0, 1), got {p!r}")


def _check_df(df):
    if not (df >= 1) or not math.isfinite(df):
        raise DomainError(f"degrees of freedom must be >= 1, got {df!r}")


def _bisect(cdf, p, lo, hi):
    """Invert a monotone CDF on a bracket [lo, hi] to full float precision."""
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if cdf(mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def normal_cdf(x: float) -> float:
    """Standard normal CDF."""
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / SQRT_2PI


def t_quantile(p: float, df: float) -> float:
    """Quantile of Student's t with ``df`` degrees of freedom."""
    _check_prob(p)
    _check_df(df)
    q = float(special.stdtrit(df, p))
    if 0.0 < p < 1.0:
        # one Newton step against the CDF tightens stdtrit to ~1 ulp
        dens = math.exp(
            special.gammaln(0.5 * (df + 1)) - special.gammaln(0.5 * df)
            - 0.5 * math.log(df * math.pi) - 0.5 * (df + 1) * math.log1p(q * q / df)
        )
        if dens > 0:
            q -= (special.stdtr(df, q) - p) / dens
    return float(q)


def t_cdf(x: float, df: float) -> float:
    _check_df(df)
    return float(special.stdtr(df, x))


def chisq_cdf(x: float, df: float) -> float:
    _check_df(df)
    if x <= 0:
        return 0.0
    return float(special.gammainc(0.5 * df, 0.5 * x))


def chisq_quantile(p: float, df: float) -> float:
    """Quantile of the central chi-square distribution."""
    _check_prob(p)
    _check_df(df)
    return float(2.0 * special.gammaincinv(0.5 * df, p))


def noncentral_chisq_cdf(x: float, df: float, ncp: float) -> float:
    """CDF of the noncentral chi-square as a Poisson(ncp/2) mixture.

    Terms are added in order of the Poisson index until the remaining Poisson
    mass falls below ``NCX2_TAIL_TOL``.
    """
    _check_df(df)
    if ncp < 0 or not math.isfinite(ncp):
        raise DomainError(f"noncentrality must be finite and >= 0, got {ncp!r}")
    if x <= 0:
        return 0.0
    if ncp == 0:
        return chisq_cdf(x, df)
    lam = 0.5 * ncp
    half_x = 0.5 * x
    log_lam = math.log(lam)
    total = 0.0
    for j in range(NCX2_MAX_TERMS):
        log_w = -lam + j * log_lam - math.lgamma(j + 1.0)
        total += math.exp(log_w) * special.gammainc(0.5 * df + j, half_x)
        # pdtrc(j, lam) is Pr(N > j), the mass still unaccounted for
        if j >= lam and special.pdtrc(j, lam) < NCX2_TAIL_TOL:
            return min(total, 1.0)
    raise NumericError(
        f"noncentral chi-square series did not converge in {NCX2_MAX_TERMS} terms"
    )


def noncentral_chisq_quantile(p: float, df: float, ncp: float) -> float:
    """Quantile of the noncentral chi-square by bracketing bisection."""
    _check_prob(p)
    _check_df(df)
    if ncp < 0 or not math.isfinite(ncp):
        raise DomainError(f"noncentrality must be finite and >= 0, got {ncp!r}")
    if ncp == 0:
        return chisq_quantile(p, df)
    hi = max(chisq_quantile(p, df), 1.0) + ncp
    cdf = lambda v: noncentral_chisq_cdf(v, df, ncp)  # noqa: E731
    while cdf(hi) < p:
        hi *= 2.0
        if hi > 1e300:
            raise NumericError("could not bracket noncentral chi-square quantile")
    return _bisect(cdf, p, 0.0, hi)


def beta_cdf(x: float, a: float, b: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if not (0.0 <= x <= 1.0):
        raise DomainError(f"x must lie in [0, 1], got {x!r}")
    if not (a > 0 and b > 0):
        raise DomainError(f"shape parameters must be positive, got a={a!r}, b={b!r}")
    return float(special.betainc(a, b, x))


# --------------------------------------------------------------------------
# Kernel density estimation
# --------------------------------------------------------------------------


def kish_size(weights) -> float:
    """Kish effective sample size (sum w)^2 / sum w^2."""
    w = np.asarray(weights, dtype=float)
    return float(w.sum() ** 2 / np.dot(w, w))


def rule_of_thumb_bandwidth(sample, n_eff=None) -> float:
    """0.9 * min(SD, IQR/1.34) * n^(-1/5).

    Falls back to the SD when the IQR is zero. ``n_eff`` replaces the sample
    size, for weighted samples.
    """
    x = np.asarray(sample, dtype=float)
    if x.size < 2:
        raise DegenerateSampleError(f"need at least 2 points for a KDE, got {x.size}")
    sd = float(np.std(x, ddof=1))
    if not sd > 0:
        raise DegenerateSampleError("sample has zero spread; bandwidth undefined")
    q75, q25 = np.quantile(x, [0.75, 0.25])
    iqr = float(q75 - q25)
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    n = x.size if n_eff is None else n_eff
    return 0.9 * spread * n ** (-0.2)


@dataclass(frozen=True)
class KdeModel:
    """Gaussian-kernel density estimate; ``weights`` are normalized to sum 1."""

    points: np.ndarray
    weights: np.ndarray
    bandwidth: float

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise DomainError(f"bandwidth must be positive, got {self.bandwidth!r}")
        if len(self.points) != len(self.weights) or len(self.points) == 0:
            raise DomainError("points and weights must be non-empty and equal length")
        if np.any(self.weights < 0) or not np.any(self.weights > 0):
            raise DomainError("weights must be nonnegative with a positive entry")


def kde_fit(sample, weights=None) -> KdeModel:
    """Fit a 1-d Gaussian KDE with the rule-of-thumb bandwidth.

    With weights the bandwidth uses the unweighted spread and the Kish
    effective size in place of n.
    """
    x = np.asarray(sample, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("sample contains non-finite values")
    if weights is None:
        w = np.full(x.size, 1.0 / max(x.size, 1))
        bw = rule_of_thumb_bandwidth(x)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != x.shape:
            raise DomainError("weights must match sample length")
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise DomainError("weights must be finite and positive")
        bw = rule_of_thumb_bandwidth(x, kish_size(w))
        w = w / w.sum()
    return KdeModel(points=x.copy(), weights=w, bandwidth=bw)


def kde_eval(model: KdeModel, x):
    """Density of the KDE at ``x`` (scalar or array)."""
    xs = np.asarray(x, dtype=float)
    z = (xs[..., None] - model.points) / model.bandwidth
    dens = normal_pdf(z) @ model.weights / model.bandwidth
    return float(dens) if xs.ndim == 0 else dens


def kde_cdf(model: KdeModel, x):
    xs = np.asarray(x, dtype=float)
    z = (xs[..., None] - model.points) / model.bandwidth
    out = special.ndtr(z) @ model.weights
    return float(out) if xs.ndim == 0 else out


def kde_sample(model: KdeModel, rng: np.random.Generator, size=None):
    """Draw from the KDE: a (weighted) random point plus bandwidth * N(0, 1)."""
    n = 1 if size is None else size
    idx = rng.choice(model.points.size, size=n, p=model.weights)
    draws = model.points[idx] + model.bandwidth * rng.standard_normal(n)
    return float(draws[0]) if size is None else draws


# --------------------------------------------------------------------------
# Weighted empirical quantiles
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class WeightedSample:
    values: np.ndarray
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        w = np.ones_like(v) if self.weights is None else np.asarray(self.weights, dtype=float)
        if v.ndim != 1 or v.shape != w.shape:
            raise DomainError("values and weights must be 1-d and of equal length")
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise DomainError("weights must be finite and strictly positive")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.values.size

    @property
    def n_eff(self) -> float:
        return kish_size(self.weights)


def weighted_quantile(sample: WeightedSample, p):
    """Quantile of the linearly interpolated weighted empirical distribution.

    Sorted values sit at cumulative-weight midpoints (c_i - w_i/2) / sum(w);
    between midpoints the quantile is linear, outside them it is clamped to
    the extreme values. With equal weights this is the type-5 quantile.
    """
    if len(sample) == 0:
        raise DegenerateSampleError("weighted quantile of an empty sample")
    ps = np.asarray(p, dtype=float)
    if np.any((ps < 0) | (ps > 1)):
        raise DomainError("p must lie in [0, 1]")
    order = np.argsort(sample.values, kind="stable")
    v = sample.values[order]
    w = sample.weights[order]
    pos = (np.cumsum(w) - 0.5 * w) / w.sum()
    out = np.interp(ps, pos, v)
    return float(out) if ps.ndim == 0 else out
