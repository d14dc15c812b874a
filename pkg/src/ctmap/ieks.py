"""Iterated linearization (continuous-time IEKS) for nonlinear models."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._linalg import NumericError
from .estimators import estimate_map
from .model import (EvaluationError, LinearAffineModel, MeasurementSeries, NodeValues,
                    NonlinearModel, TimeGrid, Trajectory)
from .om import om_cost
from .parallel import ParallelOptions


class DivergenceError(NumericError):
    """The cost increased on three consecutive non-contracting iterations."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class IterationTrace:
    costs: list = field(default_factory=list)
    max_changes: list = field(default_factory=list)
    iterates: list = field(default_factory=list)

    @property
    def iterations_run(self) -> int:
        return len(self.costs)


def linearize_about(model: NonlinearModel, nominal: Trajectory, grid: TimeGrid) -> LinearAffineModel:
    """First-order Taylor expansion of drift and measurement at every node.

    The resulting coefficients are piecewise constant between nodes.
    """
    x = np.asarray(nominal.states, float)
    if len(nominal) != len(grid):
        raise ValueError("nominal trajectory must lie on the grid")
    t = grid.node_times
    F = model.drift_jacobian(x, t)
    f = model.drift(x, t)
    H = model.measure_jacobian(x, t)
    h = model.measure(x, t)
    for name, arr in (("drift Jacobian", F), ("drift", f),
                      ("measurement Jacobian", H), ("measurement", h)):
        bad = ~np.all(np.isfinite(arr.reshape(len(grid), -1)), axis=1)
        if np.any(bad):
            raise EvaluationError(f"non-finite {name} at node {int(np.flatnonzero(bad)[0])}")
    c = f - np.einsum("kij,kj->ki", F, x)
    r = h - np.einsum("kij,kj->ki", H, x)
    nv = lambda a: NodeValues(grid, a)  # noqa: E731
    return LinearAffineModel(F=nv(F), c=nv(c), L=model.L, W=model.W, H=nv(H), r=nv(r),
                             R=model.R, m0=np.asarray(model.m0, float),
                             P0=np.asarray(model.P0, float))


def prior_nominal(model: NonlinearModel, grid: TimeGrid) -> Trajectory:
    """Euler propagation of the prior mean through the drift, no measurements."""
    x = np.empty((len(grid), model.n_x))
    x[0] = model.m0
    t = grid.node_times
    for k in range(grid.steps):
        x[k + 1] = x[k] + grid.dt * model.drift(x[k], t[k])
    return Trajectory(t, x)


def iterated_map(model: NonlinearModel, meas: MeasurementSeries, grid: TimeGrid,
                 backend: str = "par-rts", iters: int = 5, tol: float = 1e-8,
                 options: ParallelOptions | None = None,
                 nominal: Trajectory | None = None) -> tuple[Trajectory, IterationTrace]:
    """Gauss-Newton style re-linearization; no damping or line search.

    Each iteration records the full nonlinear discretized OM cost of the new
    iterate and its largest state change.  A cost increase counts towards
    divergence only if the step did not contract: near the fixed point the
    linearized MAP and the discretized cost differ at O(dt), so the cost may
    creep up by tiny amounts while the iterates converge.
    """
    if iters < 1:
        raise ValueError("iters must be at least 1")
    meas = meas.on(grid)
    current = nominal if nominal is not None else prior_nominal(model, grid)
    trace = IterationTrace()
    rises = 0
    for it in range(iters):
        try:
            lin = linearize_about(model, current, grid)
            est = estimate_map(lin, meas, grid, backend, options)
        except NumericError as exc:
            raise type(exc)(f"iteration {it + 1}: {exc}") from exc
        new = est.trajectory
        change = float(np.max(np.abs(new.states - current.states)))
        cost = om_cost(model, new, meas, grid)
        if trace.costs and cost > trace.costs[-1] and change >= trace.max_changes[-1]:
            rises += 1
        else:
            rises = 0
        trace.costs.append(cost)
        trace.max_changes.append(change)
        trace.iterates.append(new.states)
        current = new
        if rises >= 3:
            raise DivergenceError(f"cost increased on 3 consecutive iterations (last {cost:.6g})",
                                  trace)
        if change < tol:
            break
    return current, trace
