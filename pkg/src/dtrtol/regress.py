"""Ordinary and weighted least squares with classical and sandwich variances."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from dtrtol.errors import ContractError, DomainError, SingularDesignError, TooFewRowsError

#: Designs whose (weighted) condition number exceeds this are rejected.
MAX_CONDITION = 1e10


@dataclass(frozen=True)
class DesignMatrix:
    rows: np.ndarray
    column_labels: tuple

    def __post_init__(self):
        x = np.asarray(self.rows, dtype=float)
        if x.ndim != 2:
            raise DomainError("design must be a 2-d matrix")
        labels = tuple(self.column_labels)
        if len(labels) != x.shape[1]:
            raise DomainError("one label per design column is required")
        object.__setattr__(self, "rows", x)
        object.__setattr__(self, "column_labels", labels)

    @property
    def shape(self):
        return self.rows.shape


def as_design(design, labels: Optional[Sequence[str]] = None) -> DesignMatrix:
    if isinstance(design, DesignMatrix):
        return design
    x = np.atleast_2d(np.asarray(design, dtype=float))
    if labels is None:
        labels = [f"x{j}" for j in range(x.shape[1])]
    return DesignMatrix(x, tuple(labels))


@dataclass(frozen=True)
class RegressionFit:
    """Result of a least-squares fit.

    ``xtx_inverse`` is (X'X)^-1, or (X'WX)^-1 for a weighted fit, and
    ``residual_sd`` is sqrt(sum w e^2 / (n - p)) with w = 1 when unweighted.
    """

    coefficients: np.ndarray
    residuals: np.ndarray
    residual_sd: float
    xtx_inverse: np.ndarray
    weights: Optional[np.ndarray]
    n: int
    p: int
    design: DesignMatrix

    @property
    def fitted(self) -> np.ndarray:
        return self.design.rows @ self.coefficients

    def predict(self, x0) -> float:
        return float(np.asarray(x0, dtype=float) @ self.coefficients)


def _solve(design: DesignMatrix, y, w) -> RegressionFit:
    x = design.rows
    n, p = x.shape
    y = np.asarray(y, dtype=float)
    if y.shape != (n,):
        raise DomainError(f"response has shape {y.shape}, expected ({n},)")
    if not np.all(np.isfinite(y)):
        raise DomainError("response contains non-finite values")
    if n <= p:
        raise TooFewRowsError(f"need more rows than columns (n={n}, p={p})")
    root_w = np.ones(n) if w is None else np.sqrt(w)
    xw = x * root_w[:, None]
    yw = y * root_w
    sv = np.linalg.svd(xw, compute_uv=False)
    if sv[-1] <= 0 or sv[0] / sv[-1] > MAX_CONDITION:
        raise SingularDesignError(
            f"design is rank deficient (condition number {sv[0] / max(sv[-1], 1e-300):.3g})"
        )
    q, r = np.linalg.qr(xw)
    coef = solve_triangular(r, q.T @ yw)
    r_inv = solve_triangular(r, np.eye(p))
    xtx_inv = r_inv @ r_inv.T
    resid = y - x @ coef
    wts = np.ones(n) if w is None else w
    rss = float(np.sum(wts * resid**2))
    return RegressionFit(
        coefficients=coef,
        residuals=resid,
        residual_sd=float(np.sqrt(rss / (n - p))),
        xtx_inverse=0.5 * (xtx_inv + xtx_inv.T),
        weights=None if w is None else w.copy(),
        n=n,
        p=p,
        design=design,
    )


def fit_ols(design, y) -> RegressionFit:
    """Least-squares fit of ``y`` on the columns of ``design``."""
    return _solve(as_design(design), y, None)


def fit_wls(design, y, w) -> RegressionFit:
    """Weighted least squares minimizing sum w_i (y_i - x_i'b)^2."""
    w = np.asarray(w, dtype=float)
    if np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise DomainError("weights must be finite and strictly positive")
    return _solve(as_design(design), y, w)


def prediction_se(fit: RegressionFit, x0) -> float:
    """Classical standard error of the fitted mean at ``x0``."""
    x0 = np.asarray(x0, dtype=float)
    q = float(x0 @ fit.xtx_inverse @ x0)
    return fit.residual_sd * float(np.sqrt(max(q, 0.0)))


def sandwich_covariance(fit: RegressionFit, meat: str = "residual") -> np.ndarray:
    """Weighted sandwich covariance of the coefficients.

    ``meat="residual"`` is the Huber-White form
    B X'W diag(e^2) W X B with B = (X'WX)^-1.

    ``meat="model"`` replaces every e_i^2 by the weighted residual variance
    computed with mean-one weights, giving s^2 B X'W^2 X B. It reduces exactly
    to the classical covariance when all weights are equal.
    """
    if fit.weights is None:
        raise ContractError("sandwich variance requires a weighted fit")
    x = fit.design.rows
    w = fit.weights
    b = fit.xtx_inverse
    if meat == "residual":
        scale = w * fit.residuals
        xe = x * scale[:, None]
        middle = xe.T @ xe
    elif meat == "model":
        w_bar = w.mean()
        s2 = float(np.sum(w * fit.residuals**2)) / w_bar / (fit.n - fit.p)
        xw = x * w[:, None]
        middle = s2 * (xw.T @ xw)
    else:
        raise DomainError(f"unknown sandwich meat {meat!r}")
    cov = b @ middle @ b
    return 0.5 * (cov + cov.T)


def sandwich_prediction_se(fit: RegressionFit, x0, meat: str = "residual") -> float:
    """Sandwich standard error of the fitted mean at ``x0``."""
    x0 = np.asarray(x0, dtype=float)
    v = float(x0 @ sandwich_covariance(fit, meat) @ x0)
    return float(np.sqrt(max(v, 0.0)))
