"""Uniform entry point over the four linear MAP estimators."""

from __future__ import annotations

from .model import LinearAffineModel, MeasurementSeries, TimeGrid
from .om import reverse_problem
from .parallel import MapEstimate, ParallelOptions, parallel_rts_map, parallel_tf_map
from .sequential import kalman_bucy_filter, rts_smoother_seq, two_filter_seq

METHODS = ("seq-rts", "par-rts", "seq-tf", "par-tf")
SEQUENTIAL_OF = {"seq-rts": "seq-rts", "par-rts": "seq-rts",
                 "seq-tf": "seq-tf", "par-tf": "seq-tf"}


def seq_rts_map(model: LinearAffineModel, meas: MeasurementSeries, grid: TimeGrid) -> MapEstimate:
    filt = kalman_bucy_filter(model, meas, grid)
    return MapEstimate(rts_smoother_seq(model, filt, grid), filt)


def seq_tf_map(model: LinearAffineModel, meas: MeasurementSeries, grid: TimeGrid) -> MapEstimate:
    traj, cond = two_filter_seq(reverse_problem(model, meas, grid))
    warnings = []
    if cond > 1e12:
        warnings.append(f"ill-conditioned two-filter combination (condition {cond:.3g})")
    return MapEstimate(traj, None, warnings)


def estimate_map(model: LinearAffineModel, meas: MeasurementSeries, grid: TimeGrid,
                 method: str = "par-rts", options: ParallelOptions | None = None) -> MapEstimate:
    """Run one of ``METHODS``; ``options`` only affects the parallel ones."""
    options = options or ParallelOptions()
    if method == "seq-rts":
        return seq_rts_map(model, meas, grid)
    if method == "seq-tf":
        return seq_tf_map(model, meas, grid)
    if method == "par-rts":
        return parallel_rts_map(model, meas, grid, options)
    if method == "par-tf":
        return parallel_tf_map(model, meas, grid, options)
    raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
