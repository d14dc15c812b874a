"""Command-line interface: ``ctmap simulate | estimate | bench``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import os
import sys
from pathlib import Path

import numpy as np

from .bench import (SCHEMA, ExperimentConfig, build_model, load_config, run_experiment,
                    sweep, sweep_csv)
from .estimators import METHODS
from .model import ParameterError
from .models import simulate


def _threads(value: str) -> int | str:
    return value if value == "auto" else int(value)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value file; flags override its values")
    p.add_argument("--model", help="wiener, coordinated-turn, or a custom model file")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--T", type=int, help="number of blocks")
    p.add_argument("--n", type=int, help="Euler substeps per block")
    p.add_argument("--t0", type=float)
    p.add_argument("--tf", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=_threads, help="worker threads or 'auto'")
    p.add_argument("--W", help="comma-separated diagonal of W (Wiener model)")
    p.add_argument("--R", help="comma-separated diagonal of R (Wiener model)")
    p.add_argument("--iters", type=int, help="linearization iterations (nonlinear models)")
    p.add_argument("--out", help="output directory")


def _config(args, **extra) -> ExperimentConfig:
    keys = {f.name for f in dataclasses.fields(ExperimentConfig)}
    flags = {k: getattr(args, k, None) for k in keys}
    flags.update({k: v for k, v in extra.items() if v is not None})
    if flags.get("threads") == "auto":
        flags["threads"] = os.cpu_count() or 1
    if args.config:
        return load_config(args.config, **flags)
    return ExperimentConfig(**{k: v for k, v in flags.items() if v is not None})


def _cmd_simulate(args) -> int:
    cfg = _config(args)
    model = build_model(cfg)
    truth, meas = simulate(model, cfg.grid, cfg.seed)
    buf = io.StringIO()
    buf.write(SCHEMA + "\n")
    w = csv.writer(buf, lineterminator="\n")
    nx, ny = truth.states.shape[1], meas.values.shape[1]
    w.writerow(["t"] + [f"x_true{i + 1}" for i in range(nx)] + [f"y{i + 1}" for i in range(ny)])
    for row in np.column_stack([truth.times, truth.states, meas.values]):
        w.writerow([repr(float(x)) for x in row])
    _emit(buf.getvalue(), cfg.out, "simulation.csv")
    return 0


def _emit(text: str, out: str | None, name: str) -> None:
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / name).write_text(text)
    else:
        sys.stdout.write(text)


def _summarize(res) -> None:
    for r in res.records:
        diff = "-" if r.max_abs_diff_vs_seq is None else f"{r.max_abs_diff_vs_seq:.3e}"
        print(f"{r.model} {r.method} T={r.T} n={r.n} run={r.run_index} "
              f"time={r.runtime_seconds:.4f}s diff_vs_seq={diff} cost={r.cost:.6g}")
    for run, reason in res.errors:
        print(f"run {run} failed: {reason}", file=sys.stderr)


def _cmd_estimate(args) -> int:
    cfg = _config(args, repeats=1)
    res = run_experiment(cfg)
    _summarize(res)
    return 1 if res.errors and not res.records else 0


def _cmd_bench(args) -> int:
    cfg = _config(args, repeats=args.repeats)
    if args.sweep:
        Ts = [int(x) for x in args.sweep.split(",")]
        methods = args.methods.split(",") if args.methods else list(METHODS)
        for m in methods:
            if m not in METHODS:
                raise ParameterError(f"unknown method {m!r}")
        rows = sweep(cfg, Ts, methods)
        _emit(sweep_csv(rows, methods), cfg.out, "sweep.csv")
        return 0
    res = run_experiment(cfg)
    _summarize(res)
    return 1 if res.errors and not res.records else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctmap", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", help="simulate a model and write t, states, measurements")
    _add_common(p)
    p.set_defaults(func=_cmd_simulate)
    p = sub.add_parser("estimate", help="one timed estimation run with CSV output")
    _add_common(p)
    p.set_defaults(func=_cmd_estimate)
    p = sub.add_parser("bench", help="repeated timed runs, or a runtime sweep over T")
    _add_common(p)
    p.add_argument("--repeats", type=int)
    p.add_argument("--sweep", help="comma-separated block counts, e.g. 64,128,256")
    p.add_argument("--methods", help="comma-separated methods for --sweep (default: all)")
    p.set_defaults(func=_cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ParameterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
