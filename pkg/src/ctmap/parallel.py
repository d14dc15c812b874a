"""Parallel-in-time MAP estimation for linear-affine models.

Both estimators split the tau axis into ``T`` blocks, build one element per
block independently, and join them with associative scans.  Work inside a
scan level or across blocks is vectorized and optionally split across
``workers`` threads; chunking never changes the arithmetic, so outputs are
bitwise identical for any worker count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._linalg import NumericError, mv, run_chunked, spd_solve
from .elements import (ConditionalElement, ValueFunction, _coef_blocks,
                       _refine_steps, combine, init_elements, make_abar0,
                       terminal_element, value_element, value_to_gaussian)
from .model import LinearAffineModel, MeasurementSeries, ParameterError, TimeGrid, Trajectory
from .om import ReversedControlProblem, reverse_problem, reverse_trajectory
from .scan import Batched, ScanPlan, ScanStats, scan
from .sequential import FilterResult, combine_filters, info_filter_nodes

COND_LIMIT = 1e12


@dataclass(frozen=True)
class ParallelOptions:
    """Execution knobs; none of them changes the numerical result."""

    workers: int = 1
    cutoff: int = 8  # scans shorter than this run sequentially
    integrator: str = "euler"

    def plan(self, length: int, direction: str) -> ScanPlan:
        return ScanPlan(length, direction, "parallel", self.cutoff, self.workers)


@dataclass(frozen=True)
class TransitionElement(Batched):
    """Affine flow map phi(gamma) = Phi phi(s) + beta of the closed-loop dynamics."""

    Phi: np.ndarray
    beta: np.ndarray
    start: np.ndarray
    end: np.ndarray


def combine_transitions(t1: TransitionElement, t2: TransitionElement) -> TransitionElement:
    """Apply ``t1`` (earlier) then ``t2``: (Phi2 Phi1, Phi2 beta1 + beta2)."""
    gap = np.abs(np.asarray(t1.end, float) - np.asarray(t2.start, float))
    if np.any(gap > 1e-9):
        raise ParameterError(f"transition spans are not contiguous (gap {gap.max():.3g})")
    return TransitionElement(t2.Phi @ t1.Phi, mv(t2.Phi, t1.beta) + t2.beta, t1.start, t2.end)


@dataclass
class MapEstimate:
    """MAP trajectory in original time plus filter marginals and diagnostics."""

    trajectory: Trajectory
    filter: FilterResult | None = None
    warnings: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)


@dataclass(frozen=True)
class BackwardPass:
    boundary: ValueFunction  # tau_0 .. tau_T
    dense: ValueFunction | None  # every tau node
    elements: ConditionalElement
    stats: ScanStats


# ------------------------------------------------------------ backward pass


def backward_pass_parallel(problem: ReversedControlProblem,
                           options: ParallelOptions = ParallelOptions(),
                           dense: bool = True) -> BackwardPass:
    """Value functions (S, v) at block boundaries, and optionally at all nodes.

    Interior values combine each cached substep element with the value
    function at its block's right boundary.
    """
    grid = problem.grid
    T, n = grid.blocks, grid.substeps
    tau = grid.node_times
    elements, partial = init_elements(problem, options.integrator, options.workers, dense)
    term = terminal_element(problem.m0, problem.P0, tau[-1])
    seq = ConditionalElement.concatenate([elements, _batch1(term)])
    stats = ScanStats()
    suffix = scan(seq, combine, options.plan(T + 1, "reversed"), stats)
    boundary = ValueFunction(S=suffix.J, v=suffix.eta, time=np.asarray(suffix.start, float))
    if not dense:
        return BackwardPass(boundary, None, elements, stats)
    S = np.empty((grid.steps + 1,) + suffix.J.shape[1:])
    v = np.empty((grid.steps + 1,) + suffix.eta.shape[1:])
    S[grid.boundary_indices], v[grid.boundary_indices] = suffix.J, suffix.eta
    if n > 1:
        inner = np.flatnonzero(np.arange(grid.steps) % n)
        right = boundary.take(inner // n + 1)

        def work(s):
            e = combine(partial.take(inner[s]), value_element(right.take(s)))
            return e.J, e.eta

        parts = run_chunked(work, len(inner), options.workers)
        S[inner] = np.concatenate([p[0] for p in parts])
        v[inner] = np.concatenate([p[1] for p in parts])
    return BackwardPass(boundary, ValueFunction(S, v, tau.copy()), elements, stats)


def _batch1(e):
    return type(e)(**{k: np.asarray(getattr(e, k))[None] for k in e.__dataclass_fields__})


def initial_state(V0: ValueFunction) -> np.ndarray:
    """argmin_phi V(phi, tau_0) = S^-1 v."""
    try:
        return spd_solve(np.asarray(V0.S), np.asarray(V0.v), "S(tau_0)")
    except NumericError as exc:
        raise NumericError("uninformative posterior: S(tau_0) is not positive definite") from exc


# ----------------------------------------------------------- forward pass


def _closed_loop(problem, S, v, j):
    """F_bar = F - Q S_j, c_bar = Q v_j + c on interval(s) j."""
    F, c, Q, _, _ = problem.interval(j)
    return F - Q @ S[j], mv(Q, v[j]) + c


def transition_elements(problem: ReversedControlProblem, values: ValueFunction,
                        options: ParallelOptions = ParallelOptions()) -> TransitionElement:
    """Per-block Euler integration of dPhi = F_bar Phi, dbeta = F_bar beta + c_bar from (I, 0)."""
    grid = problem.grid
    T, n, dt = grid.blocks, grid.substeps, grid.dt
    nx = problem.n_x
    j = np.arange(grid.steps)
    Fb, cb = _closed_loop(problem, values.S, values.v, j)
    Fb, cb = Fb.reshape(T, n, nx, nx), cb.reshape(T, n, nx)

    def work(s):
        Fs, cs = Fb[s], cb[s]
        Phi = np.broadcast_to(np.eye(nx), (len(Fs), nx, nx)).copy()
        beta = np.zeros((len(Fs), nx))
        for m in range(n):
            Phi, beta = Phi + dt * (Fs[:, m] @ Phi), beta + dt * (mv(Fs[:, m], beta) + cs[:, m])
        return Phi, beta

    parts = run_chunked(work, T, options.workers)
    Phi = np.concatenate([p[0] for p in parts])
    beta = np.concatenate([p[1] for p in parts])
    if not (np.all(np.isfinite(Phi)) and np.all(np.isfinite(beta))):
        raise NumericError("non-finite transition element")
    tau = grid.node_times[grid.boundary_indices]
    return TransitionElement(Phi, beta, tau[:-1].copy(), tau[1:].copy())


def forward_pass_parallel(transitions: TransitionElement, phi0: np.ndarray,
                          options: ParallelOptions = ParallelOptions(),
                          stats: ScanStats | None = None) -> np.ndarray:
    """States at every block boundary: phi(tau_i) = Phi(tau_i, tau_0) phi0 + beta(tau_i, tau_0)."""
    prefix = scan(transitions, combine_transitions,
                  options.plan(len(transitions), "forward"), stats)
    phi = mv(prefix.Phi, np.asarray(phi0, float)) + prefix.beta
    return np.concatenate([np.asarray(phi0, float)[None], phi])


def densify(problem: ReversedControlProblem, values: ValueFunction, boundary_states: np.ndarray,
            options: ParallelOptions = ParallelOptions()) -> np.ndarray:
    """Euler steps of the closed-loop dynamics inside every block from its left boundary."""
    grid = problem.grid
    T, n, dt = grid.blocks, grid.substeps, grid.dt
    nx = problem.n_x
    Fb, cb = _closed_loop(problem, values.S, values.v, np.arange(grid.steps))
    Fb, cb = Fb.reshape(T, n, nx, nx), cb.reshape(T, n, nx)

    def work(s):
        phi = boundary_states[:-1][s].copy()
        out = np.empty((len(phi), n, nx))
        for m in range(n):
            out[:, m] = phi
            phi = phi + dt * (mv(Fb[s][:, m], phi) + cb[s][:, m])
        return out

    parts = run_chunked(work, T, options.workers)
    dense = np.concatenate(parts).reshape(grid.steps, nx)
    return np.concatenate([dense, boundary_states[-1:]])


# ------------------------------------------------------------- estimators


def _filter_from_values(values: ValueFunction, source: TimeGrid) -> FilterResult:
    g = value_to_gaussian(values, source.tf)
    return FilterResult(source.node_times, g.m[::-1].copy(), g.P[::-1].copy())


def parallel_rts_map(model: LinearAffineModel, meas: MeasurementSeries, grid: TimeGrid,
                     options: ParallelOptions = ParallelOptions()) -> MapEstimate:
    """Backward value-function scan, then forward transition-element scan."""
    problem = reverse_problem(model, meas, grid)
    back = backward_pass_parallel(problem, options, dense=True)
    phi0 = initial_state(back.boundary.take(0))
    trans = transition_elements(problem, back.dense, options)
    fstats = ScanStats()
    bnd = forward_pass_parallel(trans, phi0, options, fstats)
    phi = densify(problem, back.dense, bnd, options)
    traj = reverse_trajectory(Trajectory(problem.grid.node_times, phi), grid)
    return MapEstimate(traj, _filter_from_values(back.dense, grid), [],
                       {"backward_scan": back.stats, "forward_scan": fstats})


def parallel_tf_map(model: LinearAffineModel, meas: MeasurementSeries, grid: TimeGrid,
                    options: ParallelOptions = ParallelOptions()) -> MapEstimate:
    """Two-filter recovery: forward scan over [abar_0, a_1, ..] meets the backward values.

    phi(tau) = (I + Cbar S)^-1 (bbar + Cbar v).
    """
    problem = reverse_problem(model, meas, grid)
    rg = problem.grid
    T, n = rg.blocks, rg.substeps
    back = backward_pass_parallel(problem, options, dense=True)
    S, v = back.dense.S, back.dense.v
    elems = back.elements
    first = make_abar0(elems.take(0))
    seq = ConditionalElement.concatenate([_batch1(first), elems.take(slice(1, None))])
    fstats = ScanStats()
    prefix = scan(seq, combine, options.plan(T, "forward"), fstats)

    nx = problem.n_x
    b = np.empty((rg.steps + 1, nx))
    C = np.empty((rg.steps + 1, nx, nx))
    b[rg.boundary_indices[1:]], C[rg.boundary_indices[1:]] = prefix.b, prefix.C
    if n > 1 and T > 1:
        coefs = _coef_blocks(problem, n, T - 1, n)
        coefs = tuple(x[:, :n - 1] for x in coefs)
        anchors = prefix.take(slice(0, T - 1))

        def work(s):
            a = anchors.take(s)
            state = (a.A, a.b, a.C, a.eta, a.J)
            _, kept = _refine_steps(state, tuple(x[s] for x in coefs), rg.dt, True)
            return kept[1], kept[2]

        parts = run_chunked(work, T - 1, options.workers)
        idx = (np.arange(1, T)[:, None] * n + np.arange(1, n)[None]).ravel()
        b[idx] = np.concatenate([p[0] for p in parts]).reshape(-1, nx)
        C[idx] = np.concatenate([p[1] for p in parts]).reshape(-1, nx, nx)

    phi = np.empty((rg.steps + 1, nx))
    phi[n:], cond = combine_filters(S[n:], v[n:], C[n:], b[n:])
    phi[0] = spd_solve(S[0], v[0], "S(tau_0)")
    if n > 1:
        Lam, xi = info_filter_nodes(problem, n - 1)
        phi[1:n] = np.linalg.solve(Lam[1:] + S[1:n], (xi[1:] + v[1:n])[..., None])[..., 0]
    warnings = []
    worst = float(np.max(cond))
    if worst > COND_LIMIT:
        warnings.append(f"ill-conditioned two-filter combination (condition {worst:.3g})")
    traj = reverse_trajectory(Trajectory(rg.node_times, phi), grid)
    return MapEstimate(traj, _filter_from_values(back.dense, grid), warnings,
                       {"backward_scan": back.stats, "forward_scan": fstats})
