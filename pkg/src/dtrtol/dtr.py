"""Two-stage Q-learning and stage-1 tolerance-interval pipelines.

Trajectories are held column-wise in :class:`Trajectories`; a single record
is a :class:`Trajectory`. The stage-2 working model is

    Q2 = b0 + b1 s1 + b2 a1 + b3 s1 a1 + b4 s2 + b5 s2^2 + a2 (p0 + p1 a1 + p2 s2)

and the stage-1 model is saturated in the binary (s1, a1).

Method tags:

=========  ===========================================================
UTI        normal-theory regression TI on matched trajectories
UNPTI      Wilks TI per (s1, a1) cell on matched trajectories
WTI        weighted regression TI on matched trajectories
WNPTI      weighted Wilks TI per cell on matched trajectories
RBQTI      regression TI on residual-borrowed outcomes, all trajectories
RBQNPTI    Wilks TI per cell on residual-borrowed outcomes
NAIVE      regression TI on pseudooutcomes (a known-bad baseline)
=========  ===========================================================
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, NamedTuple, Optional, Tuple

import numpy as np

from dtrtol import statdist
from dtrtol.errors import (
    DegenerateSampleError,
    DomainError,
    DtrtolError,
    InsufficientCellError,
    InsufficientSampleError,
    SingularDesignError,
    TooFewRowsError,
)
from dtrtol.intervals import IntervalEstimate, IntervalSpec, ti_regression, ti_wilks, ti_wilks_weighted
from dtrtol.regress import DesignMatrix, RegressionFit, fit_ols, fit_wls
from dtrtol.statdist import WeightedSample

CELLS: Tuple[Tuple[int, int], ...] = ((0, 0), (0, 1), (1, 0), (1, 1))
SIX_METHODS = ("UTI", "UNPTI", "WTI", "WNPTI", "RBQTI", "RBQNPTI")
METHODS = SIX_METHODS + ("NAIVE",)

STAGE2_LABELS = ("1", "s1", "a1", "s1:a1", "s2", "s2^2", "a2", "a2:a1", "a2:s2")
STAGE1_LABELS = ("1", "s1", "a1", "s1:a1")

OUTCOMES = ("y_on_matched", "y_check_all", "y_tilde_all")


class Trajectory(NamedTuple):
    s1: int
    a1: int
    s2: float
    a2: int
    y: float


def _binary(x, name):
    arr = np.asarray(x)
    if arr.size and not np.all((arr == 0) | (arr == 1)):
        raise DomainError(f"{name} must be 0 or 1")
    return arr.astype(np.int64)


@dataclass(frozen=True)
class Trajectories:
    """Column store of trajectories (s1, a1, s2, a2, y)."""

    s1: np.ndarray
    a1: np.ndarray
    s2: np.ndarray
    a2: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        s2 = np.asarray(self.s2, dtype=float)
        y = np.asarray(self.y, dtype=float)
        cols = {
            "s1": _binary(self.s1, "s1"),
            "a1": _binary(self.a1, "a1"),
            "s2": s2,
            "a2": _binary(self.a2, "a2"),
            "y": y,
        }
        n = s2.size
        for name, col in cols.items():
            if col.ndim != 1 or col.size != n:
                raise DomainError(f"column {name} must be 1-d with {n} entries")
        if not (np.all(np.isfinite(s2)) and np.all(np.isfinite(y))):
            raise DomainError("s2 and y must be finite")
        for name, col in cols.items():
            object.__setattr__(self, name, col)

    def __len__(self):
        return self.s2.size

    def __iter__(self):
        for row in zip(self.s1, self.a1, self.s2, self.a2, self.y):
            yield Trajectory(int(row[0]), int(row[1]), float(row[2]), int(row[3]), float(row[4]))

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return Trajectory(int(self.s1[i]), int(self.a1[i]), float(self.s2[i]), int(self.a2[i]), float(self.y[i]))
        return Trajectories(self.s1[i], self.a1[i], self.s2[i], self.a2[i], self.y[i])

    @classmethod
    def from_records(cls, records: Iterable) -> "Trajectories":
        rows = [tuple(r) for r in records]
        if not rows:
            return cls(*(np.empty(0) for _ in range(5)))
        cols = list(zip(*rows))
        return cls(*(np.asarray(c) for c in cols))

    def cell_mask(self, s1: int, a1: int) -> np.ndarray:
        return (self.s1 == s1) & (self.a1 == a1)


def as_trajectories(data) -> Trajectories:
    if isinstance(data, Trajectories):
        return data
    if isinstance(data, Annotated):
        return data.base
    return Trajectories.from_records(data)


@dataclass(frozen=True)
class Annotated:
    """Trajectories plus match indicator, pseudooutcome, borrowed outcome and weight.

    ``y_check`` is NaN for unmatched rows until residual borrowing runs, and
    ``w`` is NaN for unmatched rows (and for matched rows before weighting).
    """

    base: Trajectories
    m: np.ndarray
    y_tilde: np.ndarray
    y_check: np.ndarray
    w: np.ndarray

    def __len__(self):
        return len(self.base)

    def cell_mask(self, s1, a1):
        return self.base.cell_mask(s1, a1)


@dataclass(frozen=True)
class Stage2Fit:
    beta2: np.ndarray
    psi2: np.ndarray
    regression: Optional[RegressionFit] = None


@dataclass(frozen=True)
class Stage1Fit:
    beta1: np.ndarray
    psi1: np.ndarray
    regression: RegressionFit


def stage2_design(s1, a1, s2, a2) -> np.ndarray:
    s1, a1, s2, a2 = (np.asarray(v, dtype=float) for v in (s1, a1, s2, a2))
    return np.column_stack([np.ones_like(s2), s1, a1, s1 * a1, s2, s2**2, a2, a2 * a1, a2 * s2])


def stage1_row(s1, a1) -> np.ndarray:
    return np.array([1.0, s1, a1, s1 * a1])


def stage1_design(s1, a1) -> np.ndarray:
    s1 = np.asarray(s1, dtype=float)
    a1 = np.asarray(a1, dtype=float)
    return np.column_stack([np.ones_like(s1), s1, a1, s1 * a1])


def fit_stage2(data) -> Stage2Fit:
    """Least-squares fit of the stage-2 working model."""
    data = as_trajectories(data)
    if len(data) <= len(STAGE2_LABELS):
        raise TooFewRowsError(f"stage-2 model needs more than {len(STAGE2_LABELS)} trajectories, got {len(data)}")
    missing = [(a1, a2) for a1 in (0, 1) for a2 in (0, 1) if not np.any((data.a1 == a1) & (data.a2 == a2))]
    if missing:
        raise SingularDesignError(f"stage-2 design lacks (a1, a2) patterns {missing}")
    x = DesignMatrix(stage2_design(data.s1, data.a1, data.s2, data.a2), STAGE2_LABELS)
    reg = fit_ols(x, data.y)
    return Stage2Fit(beta2=reg.coefficients[:6].copy(), psi2=reg.coefficients[6:].copy(), regression=reg)


def contrast2(fit: Stage2Fit, a1, s2):
    """Estimated stage-2 treatment contrast psi0 + psi1 a1 + psi2 s2."""
    p = fit.psi2
    return p[0] + p[1] * np.asarray(a1, dtype=float) + p[2] * np.asarray(s2, dtype=float)


def _beta_part(fit: Stage2Fit, s1, a1, s2):
    b = fit.beta2
    s1, a1, s2 = (np.asarray(v, dtype=float) for v in (s1, a1, s2))
    return b[0] + b[1] * s1 + b[2] * a1 + b[3] * s1 * a1 + b[4] * s2 + b[5] * s2**2


def q2_hat(fit: Stage2Fit, s1, a1, s2, a2):
    return _beta_part(fit, s1, a1, s2) + np.asarray(a2, dtype=float) * contrast2(fit, a1, s2)


def policy2(fit: Stage2Fit, a1, s2):
    """Estimated optimal stage-2 action; ties go to action 0."""
    act = (contrast2(fit, a1, s2) > 0).astype(np.int64)
    return int(act) if act.ndim == 0 else act


def pseudooutcome(fit: Stage2Fit, t):
    """max over a2 of the fitted Q2 for a trajectory (or column store)."""
    t = t if isinstance(t, (Trajectory, Trajectories)) else as_trajectories(t)
    out = _beta_part(fit, t.s1, t.a1, t.s2) + np.maximum(contrast2(fit, t.a1, t.s2), 0.0)
    return float(out) if np.ndim(out) == 0 else out


def match_indicator(fit: Stage2Fit, t):
    t = t if isinstance(t, (Trajectory, Trajectories)) else as_trajectories(t)
    m = (policy2(fit, t.a1, t.s2) == np.asarray(t.a2)).astype(np.int64)
    return int(m) if m.ndim == 0 else m


def annotate(fit: Stage2Fit, data) -> Annotated:
    data = as_trajectories(data)
    m = match_indicator(fit, data)
    y_check = np.where(m == 1, data.y, np.nan)
    return Annotated(
        base=data,
        m=np.atleast_1d(m),
        y_tilde=np.atleast_1d(pseudooutcome(fit, data)),
        y_check=y_check,
        w=np.full(len(data), np.nan),
    )


def importance_weights(ann: Annotated, max_weight: Optional[float] = None) -> Annotated:
    """Density-ratio weights for matched trajectories, cell by cell.

    In each (s1, a1) cell the weight of a matched trajectory is the KDE of all
    s2 in the cell over the KDE of matched s2, evaluated at its s2, then
    rescaled to mean 1 in the cell. ``max_weight`` clips after rescaling.
    """
    w = np.full(len(ann), np.nan)
    s2 = ann.base.s2
    for cell in CELLS:
        mask = ann.cell_mask(*cell)
        matched = mask & (ann.m == 1)
        if mask.sum() < 2 or matched.sum() < 2:
            raise InsufficientCellError(
                f"need >= 2 total and >= 2 matched trajectories, got {mask.sum()} and {matched.sum()}",
                cell=cell,
            )
        try:
            kde_all = statdist.kde_fit(s2[mask])
            kde_matched = statdist.kde_fit(s2[matched])
        except DegenerateSampleError as exc:
            raise InsufficientCellError(f"s2 density estimate failed: {exc}", cell=cell) from exc
        x = s2[matched]
        ratio = statdist.kde_eval(kde_all, x) / statdist.kde_eval(kde_matched, x)
        ratio = ratio / ratio.mean()
        if max_weight is not None:
            ratio = np.minimum(ratio, max_weight)
        w[matched] = ratio
    return replace(ann, w=w)


def residual_borrow(ann: Annotated, fit: Stage2Fit, rng: np.random.Generator) -> Annotated:
    """Fill y_check for unmatched trajectories by residual borrowing.

    Within each cell a KDE of the matched residuals y - y_tilde is formed;
    unmatched rows get y_tilde plus a KDE draw. Matched rows keep y.
    """
    y_check = np.where(ann.m == 1, ann.base.y, np.nan)
    resid = ann.base.y - ann.y_tilde
    for cell in CELLS:
        mask = ann.cell_mask(*cell)
        matched = mask & (ann.m == 1)
        unmatched = mask & (ann.m == 0)
        if not unmatched.any():
            continue
        if matched.sum() < 2:
            raise InsufficientCellError(f"need >= 2 matched trajectories, got {matched.sum()}", cell=cell)
        try:
            kde = statdist.kde_fit(resid[matched])
        except DegenerateSampleError as exc:
            raise InsufficientCellError(f"residual density estimate failed: {exc}", cell=cell) from exc
        y_check[unmatched] = ann.y_tilde[unmatched] + statdist.kde_sample(kde, rng, size=int(unmatched.sum()))
    return replace(ann, y_check=y_check)


def _stage1_rows(ann: Annotated, outcome: str):
    if outcome == "y_on_matched":
        rows = ann.m == 1
        target = ann.base.y
    elif outcome == "y_check_all":
        rows = np.ones(len(ann), dtype=bool)
        target = ann.y_check
    elif outcome == "y_tilde_all":
        rows = np.ones(len(ann), dtype=bool)
        target = ann.y_tilde
    else:
        raise DomainError(f"outcome must be one of {OUTCOMES}, got {outcome!r}")
    return rows, target


def fit_stage1(ann: Annotated, outcome: str = "y_tilde_all", weights=None) -> Stage1Fit:
    """(Weighted) least squares of the chosen outcome on {1, s1, a1, s1 a1}.

    ``weights`` is aligned with the full data and subset to the rows the
    outcome selects.
    """
    rows, target = _stage1_rows(ann, outcome)
    s1 = ann.base.s1[rows]
    a1 = ann.base.a1[rows]
    missing = [c for c in CELLS if not np.any((s1 == c[0]) & (a1 == c[1]))]
    if missing:
        raise SingularDesignError(f"stage-1 rows lack (s1, a1) patterns {missing}")
    y = target[rows]
    if not np.all(np.isfinite(y)):
        raise DomainError(f"outcome {outcome!r} has missing values; run residual_borrow first?")
    x = DesignMatrix(stage1_design(s1, a1), STAGE1_LABELS)
    if weights is None:
        reg = fit_ols(x, y)
    else:
        reg = fit_wls(x, y, np.asarray(weights, dtype=float)[rows])
    coef = reg.coefficients
    return Stage1Fit(beta1=coef[:2].copy(), psi1=coef[2:].copy(), regression=reg)


@dataclass
class Stage1Result:
    """Per-cell intervals from one pipeline run, and per-cell failures."""

    method: str
    intervals: Dict[Tuple[int, int], IntervalEstimate] = field(default_factory=dict)
    failures: Dict[Tuple[int, int], DtrtolError] = field(default_factory=dict)
    annotated: Optional[Annotated] = None
    stage2: Optional[Stage2Fit] = None

    def __getitem__(self, cell):
        if cell in self.failures:
            raise self.failures[cell]
        return self.intervals[cell]

    @property
    def ok(self) -> bool:
        return not self.failures


def _tag(exc: DtrtolError, method, cell):
    if isinstance(exc, InsufficientCellError):
        if exc.method is None:
            exc.method = method
        if exc.cell is None:
            exc.cell = cell
    return exc


def _regression_tis(fit: Stage1Fit, spec, variance_mode, method, result):
    for cell in CELLS:
        try:
            result.intervals[cell] = ti_regression(
                fit.regression, stage1_row(*cell), spec, variance_mode, method_tag=method
            )
        except DtrtolError as exc:
            result.failures[cell] = _tag(exc, method, cell)


def _wilks_tis(ann: Annotated, rows, values, weights, spec, method, result):
    for cell in CELLS:
        sel = rows & ann.cell_mask(*cell)
        try:
            if sel.sum() < 2:
                raise InsufficientCellError(f"only {sel.sum()} trajectories in cell", cell=cell, method=method)
            if weights is None:
                ti = ti_wilks(values[sel], spec, method_tag=method)
            else:
                ti = ti_wilks_weighted(WeightedSample(values[sel], weights[sel]), spec, method_tag=method)
            result.intervals[cell] = ti
        except InsufficientSampleError as exc:
            if not isinstance(exc, InsufficientCellError):
                exc = InsufficientCellError(str(exc), cell=cell, method=method)
            result.failures[cell] = _tag(exc, method, cell)


def prepare(data, stage2: Optional[Stage2Fit] = None) -> Tuple[Stage2Fit, Annotated]:
    """Fit stage 2 (unless given) and annotate matches and pseudooutcomes."""
    data = as_trajectories(data)
    fit2 = fit_stage2(data) if stage2 is None else stage2
    return fit2, annotate(fit2, data)


def build_stage1_tis(
    data,
    method: str,
    spec: IntervalSpec,
    rng: Optional[np.random.Generator] = None,
    *,
    max_weight: Optional[float] = None,
    prepared: Optional[Tuple[Stage2Fit, Annotated]] = None,
) -> Stage1Result:
    """Run one tolerance-interval pipeline end to end.

    Returns a :class:`Stage1Result` whose ``intervals`` map each (s1, a1)
    cell to its interval. Failures that affect a single cell (too few
    trajectories for a Wilks interval) are kept per cell; failures of a
    shared step (stage-2 fit, weights, pooled regression) mark every cell.
    ``prepared`` lets callers reuse one stage-2 fit across methods.
    """
    if method not in METHODS:
        raise DomainError(f"unknown method {method!r}; expected one of {METHODS}")
    result = Stage1Result(method=method)
    try:
        fit2, ann = prepared if prepared is not None else prepare(data)
        result.stage2 = fit2
        if method in ("WTI", "WNPTI"):
            ann = importance_weights(ann, max_weight=max_weight)
        elif method in ("RBQTI", "RBQNPTI"):
            if rng is None:
                raise DomainError("residual borrowing needs a random generator")
            ann = residual_borrow(ann, fit2, rng)
        result.annotated = ann
        matched = ann.m == 1
        if method == "UTI":
            _regression_tis(fit_stage1(ann, "y_on_matched"), spec, "classical", method, result)
        elif method == "WTI":
            fit1 = fit_stage1(ann, "y_on_matched", weights=ann.w)
            _regression_tis(fit1, spec, "model_sandwich", method, result)
        elif method == "RBQTI":
            _regression_tis(fit_stage1(ann, "y_check_all"), spec, "classical", method, result)
        elif method == "NAIVE":
            _regression_tis(fit_stage1(ann, "y_tilde_all"), spec, "classical", method, result)
        elif method == "UNPTI":
            _wilks_tis(ann, matched, ann.base.y, None, spec, method, result)
        elif method == "WNPTI":
            _wilks_tis(ann, matched, ann.base.y, ann.w, spec, method, result)
        elif method == "RBQNPTI":
            _wilks_tis(ann, np.ones(len(ann), dtype=bool), ann.y_check, None, spec, method, result)
    except DtrtolError as exc:
        result.intervals.clear()
        for cell in CELLS:
            result.failures[cell] = _tag(exc, method, getattr(exc, "cell", None) or cell)
    return result
