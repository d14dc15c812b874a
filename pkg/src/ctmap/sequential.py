"""Sequential baselines on the fine Euler grid.

Forward filters run in original time ``t``; the backward Riccati pass and the
two-filter smoother run in reversed time ``tau``.  Node ``j`` of the tau grid
is node ``N - j`` of the t grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._linalg import NumericError, mT, mv, singular_floor, spd_inv, spd_solve, sym
from .elements import (ValueFunction, forward_refine_nodes, init_element,
                       make_abar0)
from .model import LinearAffineModel, MeasurementSeries, TimeGrid, Trajectory
from .om import ReversedControlProblem, reverse_trajectory


@dataclass(frozen=True)
class FilterResult:
    """Filter marginals at every node of the t grid."""

    times: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __len__(self) -> int:
        return len(self.times)

    def at(self, k: int):
        return self.means[k], self.covariances[k]


def _check_pd(P, k, what):
    eigs = np.linalg.eigvalsh(P)
    if singular_floor(eigs[None])[0] or eigs[0] <= 0:
        raise NumericError(f"{what} lost positive definiteness at node {k}")


def kalman_bucy_filter(model: LinearAffineModel, meas: MeasurementSeries, grid: TimeGrid,
                       form: str = "covariance") -> FilterResult:
    """Euler discretization of the Kalman-Bucy mean and covariance ODEs.

    ``form="information"`` integrates the information-form ODEs instead
    (S = P^-1, v = P^-1 m); this is the discretization that coincides node by
    node with :func:`riccati_backward_seq`.
    """
    s = model.sample(grid)
    y = meas.on(grid).values
    dt = grid.dt
    N = grid.steps
    n = model.n_x
    HtRi = mT(spd_solve(s.R, s.H, "R"))
    means = np.empty((N + 1, n))
    covs = np.empty((N + 1, n, n))
    m, P = np.array(s.m0, float), sym(np.array(s.P0, float))
    if form == "covariance":
        means[0], covs[0] = m, P
        for k in range(N):
            F, Q, K = s.F[k], s.Q[k], P @ HtRi[k]
            dm = F @ m + s.c[k] + K @ (y[k] - s.H[k] @ m - s.r[k])
            dP = F @ P + P @ F.T + Q - K @ s.H[k] @ P
            m, P = m + dt * dm, sym(P + dt * dP)
            _check_pd(P, k + 1, "filter covariance")
            means[k + 1], covs[k + 1] = m, P
    elif form == "information":
        G = sym(HtRi @ s.H)
        g = mv(HtRi, y - s.r)
        S = spd_inv(P, "P0")
        v = spd_solve(P, m, "P0")
        Ss, vs = [S], [v]
        for k in range(N):
            F, Q = s.F[k], s.Q[k]
            SQ = S @ Q
            dS = -SQ @ S - S @ F - F.T @ S + G[k]
            dv = -SQ @ v - F.T @ v + S @ s.c[k] + g[k]
            S, v = sym(S + dt * dS), v + dt * dv
            _check_pd(S, k + 1, "filter information")
            Ss.append(S)
            vs.append(v)
        Ss, vs = np.stack(Ss), np.stack(vs)
        covs[:] = spd_inv(Ss, "information")
        means[:] = spd_solve(Ss, vs, "information")
    else:
        raise ValueError(f"unknown filter form {form!r}")
    if not (np.all(np.isfinite(means)) and np.all(np.isfinite(covs))):
        raise NumericError("non-finite filter output")
    return FilterResult(grid.node_times, means, covs)


def riccati_backward_seq(problem: ReversedControlProblem) -> ValueFunction:
    """Backward Euler sweep of the Riccati ODEs for (S, v) on every tau node.

    S_j = S_{j+1} - dt (S Q S - S F - F^T S - G),
    v_j = v_{j+1} - dt (S Q v - F^T v + S c - g), both at node j + 1.
    """
    N = problem.grid.steps
    n = problem.n_x
    S = np.empty((N + 1, n, n))
    v = np.empty((N + 1, n))
    S[N] = spd_inv(problem.P0, "P0")
    v[N] = spd_solve(problem.P0, problem.m0, "P0")
    dt = problem.grid.dt
    for j in range(N - 1, -1, -1):
        F, c, Q, G, g = problem.interval(j)
        Sn, vn = S[j + 1], v[j + 1]
        SQ = Sn @ Q
        S[j] = sym(Sn - dt * (SQ @ Sn - Sn @ F - F.T @ Sn - G))
        v[j] = vn - dt * (SQ @ vn - F.T @ vn + Sn @ c - g)
        if not (np.all(np.isfinite(S[j])) and np.all(np.isfinite(v[j]))):
            raise NumericError(f"non-finite Riccati solution at tau node {j}")
        if np.any(np.diagonal(S[j]) <= 0.0):
            rate = np.abs(np.linalg.eigvals(Q @ Sn)).max()
            raise NumericError(
                f"Riccati solution lost positive definiteness at tau node {j}; explicit "
                f"Euler needs dt < 1/|eig(Q S)| = {1.0 / rate:.3g} here (dt = {dt:.3g})")
    return ValueFunction(S=S, v=v, time=problem.grid.node_times.copy())


def rts_smoother_seq(model: LinearAffineModel, filt: FilterResult, grid: TimeGrid) -> Trajectory:
    """Backward Euler sweep of x' = F x + c + Q P^-1 (x - m) from x(tf) = m(tf)."""
    if len(filt) != len(grid):
        raise ValueError("filter result must be computed on the same grid")
    s = model.sample(grid)
    dt = grid.dt
    N = grid.steps
    x = np.empty_like(filt.means)
    x[N] = filt.means[N]
    for k in range(N - 1, -1, -1):
        xn = x[k + 1]
        corr = s.Q[k] @ spd_solve(filt.covariances[k + 1], xn - filt.means[k + 1],
                                  f"P at node {k + 1}")
        x[k] = xn - dt * (s.F[k] @ xn + s.c[k] + corr)
    return Trajectory(grid.node_times, x)


def info_filter_nodes(problem: ReversedControlProblem, stop: int):
    """Forward information filter in tau from (0, 0) up to node ``stop``.

    Returns (Lambda, xi) at tau nodes 0..stop; node 0 is the zero (flat) value.
    """
    n = problem.n_x
    dt = problem.grid.dt
    Lam = np.zeros((stop + 1, n, n))
    xi = np.zeros((stop + 1, n))
    for j in range(stop):
        F, c, Q, G, g = problem.interval(j)
        L, x = Lam[j], xi[j]
        LQ = L @ Q
        Lam[j + 1] = sym(L + dt * (G - LQ @ L - L @ F - F.T @ L))
        xi[j + 1] = x + dt * (g - LQ @ x - F.T @ x + L @ c)
    return Lam, xi


def combine_filters(S, v, Cbar, bbar):
    """phi = (I + Cbar S)^-1 (bbar + Cbar v) and the condition numbers."""
    M = np.eye(S.shape[-1]) + Cbar @ S
    phi = np.linalg.solve(M, (bbar + mv(Cbar, v))[..., None])[..., 0]
    return phi, np.linalg.cond(M)


def two_filter_seq(problem: ReversedControlProblem, values: ValueFunction | None = None):
    """Sequential two-filter smoother in tau; returns the trajectory in t.

    The forward pass starts from the first-block element with its free initial
    state eliminated and runs the forward (A, b, C) ODEs node by node.  Nodes
    inside the first block use the forward information filter instead.
    """
    grid = problem.grid
    n_sub = grid.substeps
    values = riccati_backward_seq(problem) if values is None else values
    S, v = values.S, values.v
    abar = make_abar0(init_element(problem, 0))
    b, C = forward_refine_nodes(abar, problem)
    phi = np.empty_like(v)
    phi[n_sub:], cond = combine_filters(S[n_sub:], v[n_sub:], C, b)
    _interior_first_block(problem, S, v, phi)
    traj = reverse_trajectory(Trajectory(grid.node_times, phi), problem.source_grid)
    return traj, float(np.max(cond))


def _interior_first_block(problem, S, v, phi):
    n_sub = problem.grid.substeps
    phi[0] = spd_solve(S[0], v[0], "S at tau=0")
    if n_sub > 1:
        Lam, xi = info_filter_nodes(problem, n_sub - 1)
        phi[1:n_sub] = np.linalg.solve(Lam[1:] + S[1:n_sub],
                                       (xi[1:] + v[1:n_sub])[..., None])[..., 0]
