"""Command-line entry point.

Subcommands::

    dtrtol simulate    --n N --seed S --out data.csv [--config params.json]
    dtrtol intervals   --in data.csv --seed S --out tis.csv [--methods UTI,WTI]
    dtrtol experiment  --config exp.json --out grid.csv [--threads T]
    dtrtol mixture     --seed S --out mix.csv [--mu1 0,1,2 --sigma1 0.5,1,2 --reps R]
    dtrtol bias        --seed S --out bias.csv [--xi-phi ... --xi-psi ... --sigma2-eps ...]

Exit status is 0 when the output was written, 2 for bad input or
configuration, 1 for I/O failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from typing import List, Optional, Sequence

import numpy as np

from dtrtol import dtr, harness, simgen
from dtrtol.errors import DomainError, DtrtolError, InsufficientSampleError, SingularDesignError
from dtrtol.intervals import IntervalSpec

TRAJECTORY_HEADER = ("s1", "a1", "s2", "a2", "y")
INTERVALS_HEADER = ("method", "s1", "a1", "lower", "upper", "status")

DEFAULT_MU1 = (0.0, 0.5, 1.0, 1.5, 2.0)
DEFAULT_SIGMA1 = (0.5, 0.75, 1.0, 1.5, 2.0)


class UsageError(Exception):
    pass


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _methods(text: str) -> List[str]:
    tags = [v.strip().upper() for v in text.split(",") if v.strip()]
    for t in tags:
        if t not in dtr.METHODS:
            raise argparse.ArgumentTypeError(f"unknown method {t!r}; choose from {','.join(dtr.METHODS)}")
    return tags


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _count(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("expected a nonnegative integer")
    return v


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc


def read_trajectories(path: str) -> dtr.Trajectories:
    """Parse a trajectory CSV; errors name the offending line."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from exc
    rows = []
    with fh:
        lines = (line for line in enumerate(fh, start=1) if not line[1].lstrip().startswith("#") and line[1].strip())
        header = None
        for lineno, line in lines:
            fields = next(csv.reader([line]))
            if header is None:
                header = [f.strip() for f in fields]
                if sorted(header) != sorted(TRAJECTORY_HEADER) or len(header) != len(TRAJECTORY_HEADER):
                    raise UsageError(f"{path}:{lineno}: header must contain exactly {','.join(TRAJECTORY_HEADER)}")
                continue
            if len(fields) != len(header):
                raise UsageError(f"{path}:{lineno}: expected {len(header)} fields, got {len(fields)}")
            rec = dict(zip(header, (f.strip() for f in fields)))
            try:
                vals = {k: float(v) for k, v in rec.items()}
            except ValueError:
                raise UsageError(f"{path}:{lineno}: non-numeric field in {line.strip()!r}") from None
            for k in ("s1", "a1", "a2"):
                if vals[k] not in (0.0, 1.0):
                    raise UsageError(f"{path}:{lineno}: {k} must be 0 or 1, got {rec[k]!r}")
            for k in ("s2", "y"):
                if not math.isfinite(vals[k]):
                    raise UsageError(f"{path}:{lineno}: {k} must be finite")
            rows.append(tuple(vals[k] for k in TRAJECTORY_HEADER))
        if header is None:
            raise UsageError(f"{path}: empty file, expected header {','.join(TRAJECTORY_HEADER)}")
    if not rows:
        return dtr.Trajectories(*(np.empty(0) for _ in range(5)))
    cols = np.asarray(rows, dtype=float).T
    return dtr.Trajectories(cols[0], cols[1], cols[2], cols[3], cols[4])


def write_trajectories(data: dtr.Trajectories, out) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(TRAJECTORY_HEADER)
    for t in data:
        w.writerow([t.s1, t.a1, harness.fmt(t.s2), t.a2, harness.fmt(t.y)])


def _open_out(path: str):
    try:
        return open(path, "w", newline="")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def _status(exc: Exception) -> str:
    if isinstance(exc, InsufficientSampleError):
        return "insufficient_cell"
    if isinstance(exc, SingularDesignError):
        return "singular_design"
    return "insufficient_cell"


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

PARAM_FLAGS = ("xi_phi", "xi_psi", "sigma2_eps", "ydist")


def cmd_simulate(args) -> int:
    raw = _load_json(args.config) if args.config else {}
    if not isinstance(raw, dict):
        raise UsageError("parameter file must hold a JSON object")
    for key in PARAM_FLAGS:
        val = getattr(args, key)
        if val is not None:
            raw[key] = val
    try:
        params = simgen.GenerativeParams(**raw)
    except TypeError as exc:
        raise UsageError(f"invalid parameter file: {exc}") from exc
    data = simgen.draw_trajectories(params, args.n, np.random.default_rng(args.seed))
    with _open_out(args.out) as fh:
        write_trajectories(data, fh)
    return 0


def cmd_intervals(args) -> int:
    data = read_trajectories(args.input)
    spec = IntervalSpec(args.alpha, args.gamma)
    methods = args.methods or list(dtr.SIX_METHODS)
    try:
        prepared = dtr.prepare(data)
    except DtrtolError:
        prepared = None
    rows = []
    for k, method in enumerate(methods):
        rng = harness.stream(args.seed, k)
        if prepared is None:
            res = dtr.build_stage1_tis(data, method, spec, rng)
        else:
            res = dtr.build_stage1_tis(data, method, spec, rng, prepared=prepared)
        for cell in dtr.CELLS:
            if cell in res.intervals:
                ti = res.intervals[cell]
                rows.append([method, cell[0], cell[1], harness.fmt(ti.lower), harness.fmt(ti.upper), "ok"])
            else:
                rows.append([method, cell[0], cell[1], "nan", "nan", _status(res.failures[cell])])
    with _open_out(args.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INTERVALS_HEADER)
        w.writerows(rows)
    return 0


def cmd_experiment(args) -> int:
    raw = _load_json(args.config)
    if isinstance(raw, dict) and args.seed is not None:
        raw = dict(raw, master_seed=args.seed)
    config = harness.ExperimentConfig.from_dict(raw)
    progress = (lambda msg: print(msg, file=sys.stderr)) if not args.quiet else None
    results = harness.run_grid(config, threads=args.threads, progress=progress)
    harness.write_csv(results, harness.RESULTS_HEADER, args.out, config=config.to_dict())
    return 0


def cmd_mixture(args) -> int:
    spec = IntervalSpec(args.alpha, args.gamma)
    results = harness.run_mixture(args.mu1, args.sigma1, args.n, args.reps, spec, args.seed, threads=args.threads)
    config = {
        "mu1": args.mu1, "sigma1": args.sigma1, "n": args.n, "reps": args.reps,
        "alpha": args.alpha, "gamma": args.gamma, "seed": args.seed,
    }
    harness.write_csv(results, harness.MIXTURE_HEADER, args.out, config=config)
    return 0


def cmd_bias(args) -> int:
    results = harness.run_bias_map(
        args.xi_phi, args.xi_psi, args.sigma2_eps, args.n, args.reps, args.seed, threads=args.threads
    )
    config = {
        "xi_phi": args.xi_phi, "xi_psi": args.xi_psi, "sigma2_eps": args.sigma2_eps,
        "n": args.n, "reps": args.reps, "seed": args.seed,
    }
    harness.write_csv(results, harness.BIAS_HEADER, args.out, config=config)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dtrtol", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw trajectories from the generative model")
    p.add_argument("--config", help="JSON file of generative parameters")
    p.add_argument("--n", type=_count, required=True)
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--xi-phi", dest="xi_phi", type=float)
    p.add_argument("--xi-psi", dest="xi_psi", type=float)
    p.add_argument("--sigma2-eps", dest="sigma2_eps", type=float)
    p.add_argument("--ydist", choices=simgen.YDISTS)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("intervals", help="stage-1 tolerance intervals for a trajectory CSV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--methods", type=_methods)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--gamma", type=float, default=0.9)
    p.set_defaults(func=cmd_intervals)

    p = sub.add_parser("experiment", help="run a coverage/width grid from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=_seed, help="override the config's master_seed")
    p.add_argument("--threads", type=_count, default=1, help="worker processes (0 = all cores)")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("mixture", help="two-component mixture weighting experiment")
    p.add_argument("--mu1", type=_floats, default=list(DEFAULT_MU1))
    p.add_argument("--sigma1", type=_floats, default=list(DEFAULT_SIGMA1))
    p.add_argument("--n", type=_count, default=500)
    p.add_argument("--reps", type=_count, default=200)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--gamma", type=float, default=0.9)
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=_count, default=1)
    p.set_defaults(func=cmd_mixture)

    p = sub.add_parser("bias", help="policy-value bias over a (xi_phi, xi_psi, sigma2_eps) grid")
    p.add_argument("--xi-phi", dest="xi_phi", type=_floats, default=[0.0, 0.5, 1.0])
    p.add_argument("--xi-psi", dest="xi_psi", type=_floats, default=[0.0, 0.5, 1.0])
    p.add_argument("--sigma2-eps", dest="sigma2_eps", type=_floats, default=[1.0])
    p.add_argument("--n", type=_count, default=1000)
    p.add_argument("--reps", type=_count, default=100)
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=_count, default=1)
    p.set_defaults(func=cmd_bias)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, DomainError) as exc:
        print(f"dtrtol {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"dtrtol {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
