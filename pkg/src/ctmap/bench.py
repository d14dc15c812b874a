"""Experiment harness: configs, timed estimation runs, CSV persistence."""

from __future__ import annotations

import csv
import dataclasses
import io
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._linalg import NumericError
from .estimators import METHODS, SEQUENTIAL_OF, estimate_map
from .ieks import iterated_map, linearize_about
from .model import (LinearAffineModel, MeasurementSeries, Model, ParameterError, TimeGrid,
                    Trajectory, build_time_grid, constant_model)
from .models import coordinated_turn_model, simulate, wiener_velocity_model
from .om import om_cost
from .parallel import ParallelOptions
from .sequential import kalman_bucy_filter

SCHEMA = "#schema=1"
BENCH_FIELDS = ("model", "method", "T", "n", "run_index", "runtime_seconds",
                "max_abs_diff_vs_seq", "cost")


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "wiener"  # wiener | coordinated-turn | path to a custom model file
    method: str = "par-rts"
    T: int = 100
    n: int = 10
    t0: float = 0.0
    tf: float = 5.0
    seed: int = 0
    repeats: int = 5
    threads: int = 1
    out: str | None = None
    W: str | None = None  # comma-separated diagonal, Wiener model only
    R: str | None = None
    iters: int = 5

    def __post_init__(self):
        if self.repeats < 1:
            raise ParameterError("repeats must be at least 1")
        if self.method not in METHODS:
            raise ParameterError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.T < 1 or self.n < 1:
            raise ParameterError("T and n must be positive")
        if self.threads < 1:
            raise ParameterError("threads must be at least 1")

    @property
    def grid(self) -> TimeGrid:
        return build_time_grid(self.t0, self.tf, self.T, self.n)


@dataclass(frozen=True)
class BenchRecord:
    model: str
    method: str
    T: int
    n: int
    run_index: int
    runtime_seconds: float
    max_abs_diff_vs_seq: float | None
    cost: float

    def row(self) -> list:
        diff = "" if self.max_abs_diff_vs_seq is None else repr(self.max_abs_diff_vs_seq)
        return [self.model, self.method, self.T, self.n, self.run_index,
                repr(self.runtime_seconds), diff, repr(self.cost)]


# ------------------------------------------------------------------- configs


_INT_KEYS = {"T", "n", "seed", "repeats", "threads", "iters"}
_FLOAT_KEYS = {"t0", "tf"}


def _coerce(key: str, value: str):
    if key == "threads" and value == "auto":
        return os.cpu_count() or 1
    if key in _INT_KEYS:
        return int(value)
    if key in _FLOAT_KEYS:
        return float(value)
    return value


def parse_key_values(text: str, allowed, source: str = "config") -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in allowed:
            raise ParameterError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def load_config(path: str | Path, **overrides) -> ExperimentConfig:
    fields = {f.name for f in dataclasses.fields(ExperimentConfig)}
    raw = parse_key_values(Path(path).read_text(), fields, str(path))
    values = {k: _coerce(k, v) for k, v in raw.items()}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


def _parse_matrix(text: str) -> np.ndarray:
    rows = [r for r in text.split(";") if r.strip()]
    return np.array([[float(x) for x in r.replace(",", " ").split()] for r in rows])


_CUSTOM_KEYS = ("F", "c", "L", "W", "H", "r", "R", "m0", "P0")


def load_custom_model(path: str | Path) -> LinearAffineModel:
    """Constant linear-affine model; matrix rows are separated by ``;``.

    ``c`` and ``r`` are optional and default to zero.
    """
    raw = parse_key_values(Path(path).read_text(), _CUSTOM_KEYS, str(path))
    missing = [k for k in _CUSTOM_KEYS if k not in raw and k not in ("c", "r")]
    if missing:
        raise ParameterError(f"{path}: missing keys {', '.join(missing)}")
    mats = {k: _parse_matrix(v) for k, v in raw.items()}
    vec = lambda k: None if k not in mats else mats[k].ravel()  # noqa: E731
    return constant_model(mats["F"], mats["L"], mats["W"], mats["H"], mats["R"],
                          vec("m0"), mats["P0"], c=vec("c"), r=vec("r"))


def _diag(text: str, size: int) -> np.ndarray:
    vals = [float(x) for x in text.split(",")]
    if len(vals) == 1:
        vals = vals * size
    if len(vals) != size:
        raise ParameterError(f"expected {size} diagonal entries, got {len(vals)}")
    return np.diag(vals)


def build_model(config: ExperimentConfig) -> Model:
    if config.model == "wiener":
        W = 4.0 if config.W is None else _diag(config.W, 2)
        R = 1e-2 if config.R is None else _diag(config.R, 2)
        return wiener_velocity_model(W, R)
    if config.model == "coordinated-turn":
        if config.W is not None or config.R is not None:
            raise ParameterError("W and R overrides apply to the Wiener model only")
        return coordinated_turn_model()
    path = Path(config.model)
    if not path.is_file():
        raise ParameterError(f"unknown model {config.model!r} (not a built-in name or a file)")
    return load_custom_model(path)


# ---------------------------------------------------------------- estimation


def run_estimator(model: Model, meas: MeasurementSeries, grid: TimeGrid, method: str,
                  options: ParallelOptions, iters: int = 5) -> Trajectory:
    """MAP trajectory; nonlinear models go through iterated linearization."""
    if isinstance(model, LinearAffineModel):
        return estimate_map(model, meas, grid, method, options).trajectory
    traj, _ = iterated_map(model, meas, grid, backend=method, iters=iters, options=options)
    return traj


def _filter_means(model: Model, meas, grid, traj: Trajectory) -> np.ndarray:
    lin = model if isinstance(model, LinearAffineModel) else linearize_about(model, traj, grid)
    try:
        return kalman_bucy_filter(lin, meas, grid).means
    except NumericError:
        return np.full((len(grid), model.n_x), np.nan)


@dataclass
class ExperimentResult:
    records: list
    errors: list
    truth: Trajectory
    meas: MeasurementSeries
    estimate: Trajectory | None


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Simulate once, time ``repeats`` estimator runs, compare to the sequential method.

    Timers wrap the estimator call only.  A failing run is reported in
    ``errors`` and the remaining repeats continue.
    """
    model = build_model(config)
    grid = config.grid
    truth, meas = simulate(model, grid, config.seed)
    options = ParallelOptions(workers=config.threads)
    ref_method = SEQUENTIAL_OF[config.method]
    reference = None
    if ref_method != config.method:
        try:
            reference = run_estimator(model, meas, grid, ref_method, options, config.iters)
        except NumericError:
            reference = None
    records, errors, estimate = [], [], None
    for run in range(config.repeats):
        start = time.perf_counter()
        try:
            traj = run_estimator(model, meas, grid, config.method, options, config.iters)
        except (NumericError, ParameterError) as exc:
            errors.append((run, str(exc)))
            continue
        elapsed = time.perf_counter() - start
        estimate = traj
        diff = None
        if ref_method != config.method:
            diff = float("nan") if reference is None else \
                float(np.max(np.abs(traj.states - reference.states)))
        cost = om_cost(model, traj, meas, grid)
        records.append(BenchRecord(config.model, config.method, config.T, config.n, run,
                                   elapsed, diff, cost))
    result = ExperimentResult(records, errors, truth, meas, estimate)
    if config.out:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.csv").write_text(bench_csv(records, errors))
        if estimate is not None:
            filt = _filter_means(model, meas, grid, estimate)
            (out / "trajectory.csv").write_text(trajectory_csv(truth, meas, filt, estimate))
    return result


# ----------------------------------------------------------------------- CSV


def bench_csv(records, errors=()) -> str:
    buf = io.StringIO()
    buf.write(SCHEMA + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCH_FIELDS)
    for r in records:
        w.writerow(r.row())
    for run, reason in errors:
        buf.write(f"#error run_index={run}: {' '.join(reason.split())}\n")
    return buf.getvalue()


def read_bench_csv(text: str) -> list[BenchRecord]:
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    out = []
    for row in csv.DictReader(lines):
        diff = row["max_abs_diff_vs_seq"]
        out.append(BenchRecord(row["model"], row["method"], int(row["T"]), int(row["n"]),
                               int(row["run_index"]), float(row["runtime_seconds"]),
                               None if diff == "" else float(diff), float(row["cost"])))
    return out


def trajectory_csv(truth: Trajectory, meas: MeasurementSeries, filter_means: np.ndarray,
                   estimate: Trajectory) -> str:
    nx, ny = truth.states.shape[1], meas.values.shape[1]
    header = (["t"] + [f"x_true{i + 1}" for i in range(nx)] + [f"y{i + 1}" for i in range(ny)]
              + [f"m_filter{i + 1}" for i in range(nx)] + [f"x_map{i + 1}" for i in range(nx)])
    table = np.column_stack([truth.times, truth.states, meas.values, filter_means,
                             estimate.states])
    buf = io.StringIO()
    buf.write(SCHEMA + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in table:
        w.writerow([repr(float(x)) for x in row])
    return buf.getvalue()


def sweep(config: ExperimentConfig, Ts, methods) -> list[tuple[int, dict]]:
    """Mean runtime per method for each block count (fixed span and ``n``)."""
    rows = []
    for T in Ts:
        means = {}
        for method in methods:
            res = run_experiment(dataclasses.replace(config, T=int(T), method=method, out=None))
            times = [r.runtime_seconds for r in res.records]
            means[method] = float(np.mean(times)) if times else float("nan")
        rows.append((int(T), means))
    return rows


def sweep_csv(rows, methods) -> str:
    buf = io.StringIO()
    buf.write(SCHEMA + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["T"] + list(methods))
    for T, means in rows:
        w.writerow([T] + [repr(means[m]) for m in methods])
    return buf.getvalue()
