"""Monte Carlo experiment runner: coverage, relative width and policy-value bias.

Every replicate draws from its own random stream, derived from
``numpy.random.SeedSequence(master_seed, spawn_key=(grid_index, replicate,
stream))``. Stream 0 generates the dataset, stream 1 feeds the content and
width oracles, and stream ``10 + k`` belongs to the k-th method in
:data:`dtrtol.dtr.METHODS`. Results therefore do not depend on worker count
or scheduling.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from dtrtol import dtr, simgen
from dtrtol.errors import DomainError, DtrtolError
from dtrtol.intervals import IntervalSpec, ti_normal, ti_regression, ti_wilks, ti_wilks_weighted
from dtrtol.regress import fit_wls
from dtrtol.statdist import WeightedSample

RESULTS_HEADER = (
    "method", "s1", "a1", "xi_phi", "xi_psi", "sigma2_eps", "ydist", "gamma", "alpha",
    "coverage", "coverage_ci_lo", "coverage_ci_hi", "mean_rel_width", "reps_effective", "failures",
)
MIXTURE_HEADER = ("method", "mu1", "sigma1", "coverage", "coverage_ci_lo", "coverage_ci_hi", "mean_rel_width", "reps")
BIAS_HEADER = ("xi_phi", "xi_psi", "sigma2_eps", "mean_bias", "se_bias", "reps")

MIXTURE_METHODS = ("UTI", "UNPTI", "WTI", "WNPTI")
STREAM_DATA = 0
STREAM_ORACLE = 1
STREAM_METHOD0 = 10


def stream(master_seed: int, *key: int) -> np.random.Generator:
    """Generator for the sub-stream identified by ``key`` under ``master_seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key)))


def clopper_pearson(successes: int, trials: int, level: float = 0.95) -> Tuple[float, float]:
    """Exact binomial confidence interval for a proportion."""
    if trials <= 0:
        return 0.0, 1.0
    tail = 0.5 * (1.0 - level)
    lo = 0.0 if successes == 0 else float(stats.beta.ppf(tail, successes, trials - successes + 1))
    hi = 1.0 if successes == trials else float(stats.beta.ppf(1.0 - tail, successes + 1, trials - successes))
    return lo, hi


def fmt(value) -> str:
    """Serialize a CSV field; floats get 6 significant digits."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6g}"
    return str(value)


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------

GRID_KEYS = ("xi_phi", "xi_psi", "sigma2_eps", "ydist")
CONFIG_KEYS = ("grid", "n", "reps", "methods", "alpha", "gamma", "master_seed", "oracle_n_mc")


@dataclass(frozen=True)
class GridPoint:
    xi_phi: float
    xi_psi: float
    sigma2_eps: float
    ydist: str

    def params(self) -> simgen.GenerativeParams:
        return simgen.GenerativeParams(
            xi_phi=self.xi_phi, xi_psi=self.xi_psi, sigma2_eps=self.sigma2_eps, ydist=self.ydist
        )


@dataclass(frozen=True)
class ExperimentConfig:
    master_seed: int
    xi_phi: Tuple[float, ...] = (1.0,)
    xi_psi: Tuple[float, ...] = (1.0,)
    sigma2_eps: Tuple[float, ...] = (10.0,)
    ydist: Tuple[str, ...] = ("normal",)
    n: int = 1000
    reps: int = 200
    methods: Tuple[str, ...] = dtr.SIX_METHODS
    alpha: float = 0.05
    gamma: float = 0.9
    oracle_n_mc: int = 100_000

    def __post_init__(self):
        for key in GRID_KEYS + ("methods",):
            object.__setattr__(self, key, tuple(getattr(self, key)))
        object.__setattr__(self, "xi_phi", tuple(float(v) for v in self.xi_phi))
        object.__setattr__(self, "xi_psi", tuple(float(v) for v in self.xi_psi))
        object.__setattr__(self, "sigma2_eps", tuple(float(v) for v in self.sigma2_eps))
        if self.reps < 1:
            raise DomainError("reps must be >= 1")
        if self.n < 10:
            raise DomainError("n must be >= 10 for the stage-2 working model")
        if self.oracle_n_mc < 1:
            raise DomainError("oracle_n_mc must be >= 1")
        if not (0 <= self.master_seed < 2**64):
            raise DomainError("master_seed must be an unsigned 64-bit integer")
        for v in self.xi_phi + self.xi_psi:
            if not 0.0 <= v <= 1.0:
                raise DomainError(f"xi values must lie in [0, 1], got {v}")
        for v in self.sigma2_eps:
            if not v > 0:
                raise DomainError(f"sigma2_eps values must be positive, got {v}")
        for v in self.ydist:
            if v not in simgen.YDISTS:
                raise DomainError(f"unknown ydist {v!r}")
        IntervalSpec(self.alpha, self.gamma)

    @property
    def spec(self) -> IntervalSpec:
        return IntervalSpec(self.alpha, self.gamma)

    def grid_points(self) -> List[GridPoint]:
        return [GridPoint(*combo) for combo in itertools.product(self.xi_phi, self.xi_psi, self.sigma2_eps, self.ydist)]

    def to_dict(self) -> dict:
        return {
            "grid": {k: list(getattr(self, k)) for k in GRID_KEYS},
            "n": self.n,
            "reps": self.reps,
            "methods": list(self.methods),
            "alpha": self.alpha,
            "gamma": self.gamma,
            "master_seed": self.master_seed,
            "oracle_n_mc": self.oracle_n_mc,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        """Build a config from its JSON form, rejecting unknown keys by name."""
        if not isinstance(raw, dict):
            raise DomainError("config must be a JSON object")
        unknown = sorted(set(raw) - set(CONFIG_KEYS))
        if unknown:
            raise DomainError(f"unknown config key(s): {', '.join(unknown)}")
        if "master_seed" not in raw:
            raise DomainError("config key 'master_seed' is required")
        grid = raw.get("grid", {})
        if not isinstance(grid, dict):
            raise DomainError("config key 'grid' must be an object")
        bad = sorted(set(grid) - set(GRID_KEYS))
        if bad:
            raise DomainError(f"unknown grid key(s): {', '.join('grid.' + b for b in bad)}")
        kwargs = {k: v for k, v in raw.items() if k != "grid"}
        for k, v in grid.items():
            kwargs[k] = v if isinstance(v, list) else [v]
        for m in kwargs.get("methods", []):
            if m not in dtr.METHODS:
                raise DomainError(f"config key 'methods': unknown method {m!r}")
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise DomainError(f"invalid config: {exc}") from exc


# --------------------------------------------------------------------------
# Result rows
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CellResult:
    method: str
    s1: int
    a1: int
    xi_phi: float
    xi_psi: float
    sigma2_eps: float
    ydist: str
    gamma: float
    alpha: float
    coverage: float
    coverage_ci_lo: float
    coverage_ci_hi: float
    mean_rel_width: float
    reps_effective: int
    failures: int
    mean_content: float = field(default=float("nan"), compare=False)

    @property
    def reps(self) -> int:
        return self.reps_effective + self.failures

    def row(self):
        return [fmt(getattr(self, k)) for k in RESULTS_HEADER]


@dataclass(frozen=True)
class MixtureResult:
    method: str
    mu1: float
    sigma1: float
    coverage: float
    coverage_ci_lo: float
    coverage_ci_hi: float
    mean_rel_width: float
    reps: int
    failures: int = 0
    mean_content: float = field(default=float("nan"), compare=False)

    def row(self):
        return [fmt(getattr(self, k)) for k in MIXTURE_HEADER]


@dataclass(frozen=True)
class BiasResult:
    xi_phi: float
    xi_psi: float
    sigma2_eps: float
    mean_bias: float
    se_bias: float
    reps: int

    def row(self):
        return [fmt(getattr(self, k)) for k in BIAS_HEADER]


def write_csv(rows, header, out, config: Optional[dict] = None):
    """Write result rows to a path or text stream.

    A leading ``# config: {...}`` comment records the resolved config.
    """
    if isinstance(out, (str, os.PathLike)):
        try:
            with open(out, "w", newline="") as fh:
                write_csv(rows, header, fh, config)
        except OSError as exc:
            raise OSError(f"cannot write results to {os.fspath(out)}: {exc.strerror}") from exc
        return
    if config is not None:
        out.write("# config: " + json.dumps(config, sort_keys=True, separators=(",", ":")) + "\n")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    for r in rows:
        writer.writerow(r.row())


def results_to_csv(rows, header, config=None) -> str:
    buf = io.StringIO()
    write_csv(rows, header, buf, config)
    return buf.getvalue()


# --------------------------------------------------------------------------
# DTR grid experiment
# --------------------------------------------------------------------------

MethodFn = Callable[..., dtr.Stage1Result]


def default_method(method: str) -> MethodFn:
    def run(data, spec, rng, prepared):
        return dtr.build_stage1_tis(data, method, spec, rng, prepared=prepared)

    return run


def _method_stream(tag: str, position: int) -> int:
    if tag in dtr.METHODS:
        return STREAM_METHOD0 + dtr.METHODS.index(tag)
    return STREAM_METHOD0 + 100 + position


def run_replicate(
    config: ExperimentConfig,
    point: GridPoint,
    g_index: int,
    rep: int,
    method_fns: Optional[Dict[str, MethodFn]] = None,
):
    """One replicate at one grid point.

    Returns ``{(method, cell): (content, rel_width) | None}`` where ``None``
    marks a pipeline failure for that cell.
    """
    params = point.params()
    spec = config.spec
    seed = config.master_seed
    data = simgen.draw_trajectories(params, config.n, stream(seed, g_index, rep, STREAM_DATA))
    try:
        prepared = dtr.prepare(data)
    except DtrtolError:
        # no estimated policy, so neither intervals nor oracle exist
        return {(tag, cell): None for tag in config.methods for cell in dtr.CELLS}
    runs = {}
    for pos, tag in enumerate(config.methods):
        fn = (method_fns or {}).get(tag) or default_method(tag)
        runs[tag] = fn(data, spec, stream(seed, g_index, rep, _method_stream(tag, pos)), prepared)
    out = {}
    fit2 = prepared[0]
    oracle_rng = stream(seed, g_index, rep, STREAM_ORACLE)
    for cell in dtr.CELLS:
        draws = simgen.sample_outcomes(params, fit2, cell[0], cell[1], config.oracle_n_mc, oracle_rng)
        draws.sort()
        h_star = simgen.optimal_width_from_sample(draws, spec.gamma)
        for tag in config.methods:
            res = runs[tag]
            if res is None or cell not in res.intervals:
                out[(tag, cell)] = None
                continue
            ti = res.intervals[cell]
            content = simgen.content_from_sample(draws, ti.lower, ti.upper)
            out[(tag, cell)] = (content, ti.width / h_star)
    return out


def _aggregate(config: ExperimentConfig, point: GridPoint, replicates) -> List[CellResult]:
    results = []
    for tag in config.methods:
        for cell in dtr.CELLS:
            vals = [rep[(tag, cell)] for rep in replicates if rep[(tag, cell)] is not None]
            fails = len(replicates) - len(vals)
            k = sum(1 for c, _ in vals if c >= config.gamma)
            n_ok = len(vals)
            lo, hi = clopper_pearson(k, n_ok)
            with np.errstate(all="ignore"):
                width = float(np.mean([w for _, w in vals])) if vals else float("nan")
                mc = float(np.mean([c for c, _ in vals])) if vals else float("nan")
            results.append(
                CellResult(
                    method=tag, s1=cell[0], a1=cell[1],
                    xi_phi=point.xi_phi, xi_psi=point.xi_psi, sigma2_eps=point.sigma2_eps, ydist=point.ydist,
                    gamma=config.gamma, alpha=config.alpha,
                    coverage=k / n_ok if n_ok else float("nan"),
                    coverage_ci_lo=lo, coverage_ci_hi=hi,
                    mean_rel_width=width,
                    reps_effective=n_ok, failures=fails, mean_content=mc,
                )
            )
    return results


def _replicate_task(args):
    config, point, g, r = args
    return run_replicate(config, point, g, r)


def _map(fn, tasks, threads: int):
    workers = (os.cpu_count() or 1) if threads == 0 else threads
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


def run_cell(
    config: ExperimentConfig,
    point: GridPoint,
    g_index: int = 0,
    method_fns: Optional[Dict[str, MethodFn]] = None,
    threads: int = 1,
) -> List[CellResult]:
    """All replicates at one grid point, aggregated per method and (s1, a1) cell.

    ``method_fns`` overrides pipelines by tag (callables taking
    ``(data, spec, rng, prepared)``); overriding forces serial execution.
    """
    if method_fns:
        replicates = [run_replicate(config, point, g_index, r, method_fns) for r in range(config.reps)]
    else:
        tasks = [(config, point, g_index, r) for r in range(config.reps)]
        replicates = _map(_replicate_task, tasks, threads)
    return _aggregate(config, point, replicates)


def run_grid(config: ExperimentConfig, threads: int = 1, progress: Optional[Callable[[str], None]] = None) -> List[CellResult]:
    """Run the Cartesian grid; rows come out in grid order, then method, then cell."""
    points = config.grid_points()
    if not config.methods:
        return []
    tasks = [(config, p, g, r) for g, p in enumerate(points) for r in range(config.reps)]
    replicates = _map(_replicate_task, tasks, threads)
    results = []
    for g, point in enumerate(points):
        chunk = replicates[g * config.reps:(g + 1) * config.reps]
        results.extend(_aggregate(config, point, chunk))
        if progress is not None:
            progress(
                f"[{g + 1}/{len(points)}] xi_phi={point.xi_phi} xi_psi={point.xi_psi} "
                f"sigma2_eps={point.sigma2_eps} ydist={point.ydist}"
            )
    return results


# --------------------------------------------------------------------------
# Policy-value bias map
# --------------------------------------------------------------------------


def _bias_task(args):
    params, n, seed, g, r, oracle_psi = args
    data = simgen.draw_trajectories(params, n, stream(seed, g, r, STREAM_DATA))
    fit2 = dtr.fit_stage2(data)
    if oracle_psi:
        fit2 = dtr.Stage2Fit(beta2=fit2.beta2, psi2=params.true_psi2, regression=fit2.regression)
    return simgen.policy_value_bias(params, fit2, data)


def run_bias_map(
    xi_phi_grid: Sequence[float],
    xi_psi_grid: Sequence[float],
    sigma2_eps_grid: Sequence[float],
    n: int,
    reps: int,
    seed: int,
    *,
    oracle_psi: bool = False,
    threads: int = 1,
) -> List[BiasResult]:
    """Mean policy-value bias per grid point.

    ``oracle_psi`` replaces the estimated contrast with the true one, which
    must give zero bias.
    """
    points = list(itertools.product(xi_phi_grid, xi_psi_grid, sigma2_eps_grid))
    tasks = []
    for g, (fp, fs, s2e) in enumerate(points):
        params = simgen.GenerativeParams(xi_phi=fp, xi_psi=fs, sigma2_eps=s2e)
        tasks.extend((params, n, seed, g, r, oracle_psi) for r in range(reps))
    biases = np.asarray(_map(_bias_task, tasks, threads), dtype=float).reshape(len(points), reps)
    out = []
    for (fp, fs, s2e), row in zip(points, biases):
        se = float(row.std(ddof=1) / math.sqrt(reps)) if reps > 1 else float("nan")
        out.append(BiasResult(float(fp), float(fs), float(s2e), float(row.mean()), se, reps))
    return out


# --------------------------------------------------------------------------
# Two-component mixture experiment
# --------------------------------------------------------------------------


def draw_matched(params: simgen.MixtureParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw from the mixture until ``n`` matched (M=1) outcomes are collected."""
    kept = []
    total = 0
    while total < n:
        m, y = simgen.draw_mixture(params, rng, size=2 * n)
        sel = y[m == 1]
        kept.append(sel)
        total += sel.size
    return np.concatenate(kept)[:n]


def mixture_interval(method: str, y: np.ndarray, w: np.ndarray, spec: IntervalSpec):
    """One of the four matched-data tolerance intervals of the mixture experiment."""
    if method == "UTI":
        return ti_normal(y, spec, method_tag=method)
    if method == "UNPTI":
        return ti_wilks(y, spec, method_tag=method)
    if method == "WTI":
        fit = fit_wls(np.ones((y.size, 1)), y, w)
        return ti_regression(fit, [1.0], spec, "model_sandwich", method_tag=method)
    if method == "WNPTI":
        return ti_wilks_weighted(WeightedSample(y, w), spec, method_tag=method)
    raise DomainError(f"unknown mixture method {method!r}")


def _mixture_task(args):
    params, n, spec, seed, g, r = args
    y = draw_matched(params, n, stream(seed, g, r, STREAM_DATA))
    w = simgen.mixture_analytic_weights(params, y)
    w = w / w.mean()
    res = {}
    for m in MIXTURE_METHODS:
        try:
            ti = mixture_interval(m, y, w, spec)
        except DtrtolError:
            res[m] = None
            continue
        content = float(simgen.mixture_cdf(params, ti.upper) - simgen.mixture_cdf(params, ti.lower))
        res[m] = (content, ti.width)
    return res


def run_mixture(
    mu1_grid: Sequence[float],
    sigma1_grid: Sequence[float],
    n: int,
    reps: int,
    spec: IntervalSpec,
    seed: int,
    *,
    threads: int = 1,
) -> List[MixtureResult]:
    """Coverage and relative width of U/W x normal/Wilks TIs built from matched draws."""
    points = list(itertools.product(mu1_grid, sigma1_grid))
    tasks = []
    for g, (mu1, sd1) in enumerate(points):
        params = simgen.MixtureParams(mu1=float(mu1), sigma1=float(sd1))
        tasks.extend((params, n, spec, seed, g, r) for r in range(reps))
    reps_out = _map(_mixture_task, tasks, threads)
    out = []
    for g, (mu1, sd1) in enumerate(points):
        params = simgen.MixtureParams(mu1=float(mu1), sigma1=float(sd1))
        h_star = simgen.mixture_quantile(params, 0.5 * (1 + spec.gamma)) - simgen.mixture_quantile(
            params, 0.5 * (1 - spec.gamma)
        )
        chunk = reps_out[g * reps:(g + 1) * reps]
        for m in MIXTURE_METHODS:
            vals = [c[m] for c in chunk if c[m] is not None]
            k = sum(1 for c, _ in vals if c >= spec.gamma)
            lo, hi = clopper_pearson(k, len(vals))
            out.append(
                MixtureResult(
                    method=m, mu1=float(mu1), sigma1=float(sd1),
                    coverage=k / len(vals) if vals else float("nan"),
                    coverage_ci_lo=lo, coverage_ci_hi=hi,
                    mean_rel_width=float(np.mean([wd for _, wd in vals]) / h_star) if vals else float("nan"),
                    reps=len(vals), failures=reps - len(vals),
                    mean_content=float(np.mean([c for c, _ in vals])) if vals else float("nan"),
                )
            )
    return out
