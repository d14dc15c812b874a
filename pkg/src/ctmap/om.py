"""Discretized Onsager-Machlup cost and the time-reversed control problem."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ._linalg import NumericError, mT, mv, spd_solve, sym
from .model import (LinearAffineModel, MeasurementSeries, Model, TimeGrid,
                    Trajectory)


def gaussian_nll(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    """-log N(x; mean, cov), normalization included."""
    diff = np.asarray(x, float) - mean
    _, logdet = np.linalg.slogdet(cov)
    return float(0.5 * diff @ spd_solve(cov, diff, "P0")
                 + 0.5 * (len(diff) * np.log(2 * np.pi) + logdet))


def psd_pinv(Q: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    """Moore-Penrose inverse of (batched) symmetric PSD matrices.

    Raises when a matrix has no eigenvalue above the floor (no diffusion at all).
    """
    eigs, vecs = np.linalg.eigh(sym(Q))
    top = np.maximum(1.0, eigs.max(axis=-1, keepdims=True))
    keep = eigs > floor * top
    dead = ~keep.any(axis=-1)
    if np.any(dead):
        node = int(np.flatnonzero(np.atleast_1d(dead))[0])
        raise NumericError(f"diffusion matrix Q is zero at node {node}")
    inv = np.where(keep, 1.0 / np.where(keep, eigs, 1.0), 0.0)
    return (vecs * inv[..., None, :]) @ mT(vecs)


def _quad_pinv(res: np.ndarray, Q: np.ndarray) -> np.ndarray:
    # constant Q (stride-0 broadcast) is factorized once
    if Q.ndim == 3 and Q.strides[0] == 0:
        Qp = psd_pinv(Q[0])
        return np.einsum("ki,ij,kj->k", res, Qp, res)
    Qp = psd_pinv(Q)
    return np.einsum("ki,kij,kj->k", res, Qp, res)


def om_cost(model: Model, traj: Trajectory, meas: MeasurementSeries,
            grid: TimeGrid) -> float:
    """Left-endpoint discretization of the Onsager-Machlup functional.

    prior NLL + sum_k dt [ div f / 2 + |d_k - f_k|^2_{Q^+} / 2 + |y_k - h_k|^2_{R^-1} / 2 ]
    over k = 0..N-1 with d_k the forward difference.  Rank-deficient ``Q`` is
    handled with its pseudo-inverse, i.e. only the driven directions of the
    residual are penalized.
    """
    x = np.asarray(traj.states, float)
    if x.shape[0] != len(grid) or len(meas) != len(grid):
        raise ValueError("trajectory and measurements must be aligned with the grid")
    dt = grid.dt
    f, div, h = model.evaluate(x, grid)
    L, W, R = model.noise(grid)
    Q = L @ W @ mT(L)
    res = (x[1:] - x[:-1]) / dt - f[:-1]
    err = meas.values[:-1] - h[:-1]
    Rk = R[:-1]
    if Rk.strides[0] == 0:
        Rinv_err = spd_solve(Rk[0], err.T, "R").T
    else:
        Rinv_err = spd_solve(Rk, err, "R")
    terms = 0.5 * div[:-1] + 0.5 * _quad_pinv(res, Q[:-1]) + 0.5 * np.sum(err * Rinv_err, axis=-1)
    # np.sum reduces with a fixed pairwise tree: reproducible for a given grid
    return gaussian_nll(x[0], np.asarray(model.m0, float), np.asarray(model.P0, float)) + dt * float(np.sum(terms))


# ------------------------------------------------------------ reversed problem


@dataclass(frozen=True, eq=False)
class ReversedControlProblem:
    """Linear-quadratic tracking problem in reversed time ``tau = tf - t``.

    Arrays hold node samples on the tau grid: ``F[j] = -F(tf - tau_j)`` and so
    on.  The Euler interval ``[tau_j, tau_{j+1}]`` uses the node ``j + 1``
    sample (the left endpoint in original time), so every recursion consumes
    exactly the measurements ``y_0 .. y_{N-1}`` of the left-endpoint cost.
    """

    grid: TimeGrid
    source_grid: TimeGrid
    F: np.ndarray
    c: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    r: np.ndarray
    R: np.ndarray
    y: np.ndarray
    m0: np.ndarray
    P0: np.ndarray

    @property
    def n_x(self) -> int:
        return self.m0.shape[0]

    @cached_property
    def info(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-node ``G = H^T R^-1 H`` and ``g = H^T R^-1 (y - r)``."""
        HtRi = mT(spd_solve(self.R, self.H, "R"))
        G = sym(HtRi @ self.H)
        g = mv(HtRi, self.y - self.r)
        return G, g

    def interval(self, j):
        """Coefficients used on Euler interval(s) ``j`` -> (F, c, Q, G, g)."""
        G, g = self.info
        k = np.asarray(j) + 1
        return self.F[k], self.c[k], self.Q[k], G[k], g[k]


def reverse_problem(model: LinearAffineModel, meas: MeasurementSeries,
                    grid: TimeGrid) -> ReversedControlProblem:
    s = model.sample(grid)
    rev = slice(None, None, -1)
    return ReversedControlProblem(
        grid=grid.reversed_axis(), source_grid=grid,
        F=-np.ascontiguousarray(s.F[rev]), c=-np.ascontiguousarray(s.c[rev]),
        Q=np.ascontiguousarray(s.Q[rev]), H=np.ascontiguousarray(s.H[rev]),
        r=np.ascontiguousarray(s.r[rev]), R=np.ascontiguousarray(s.R[rev]),
        y=np.ascontiguousarray(meas.on(grid).values[rev]), m0=s.m0, P0=s.P0)


def reverse_trajectory(phi: Trajectory, grid: TimeGrid) -> Trajectory:
    """Map a trajectory between the tau axis and the t axis (an involution)."""
    times = grid.node_times if len(grid) == len(phi) else phi.times
    cov = None if phi.covariances is None else phi.covariances[::-1].copy()
    return Trajectory(times.copy(), phi.states[::-1].copy(), cov)


def control_cost(problem: ReversedControlProblem, phi: np.ndarray) -> float:
    """Left-endpoint discretization (in tau) of the reversed control cost.

    u_j = (phi_{j+1} - phi_j) / dt - (F~_j phi_j + c~_j); terminal term is the
    prior NLL of ``phi_N``.
    """
    dt = problem.grid.dt
    u = (phi[1:] - phi[:-1]) / dt - (mv(problem.F[:-1], phi[:-1]) + problem.c[:-1])
    err = problem.y[:-1] - mv(problem.H[:-1], phi[:-1]) - problem.r[:-1]
    quad_u = _quad_pinv(u, problem.Q[:-1])
    quad_e = np.sum(err * spd_solve(problem.R[:-1], err, "R"), axis=-1)
    div_tilde = np.trace(problem.F[:-1], axis1=-2, axis2=-1)
    terms = 0.5 * quad_u + 0.5 * quad_e - 0.5 * div_tilde
    return gaussian_nll(phi[-1], problem.m0, problem.P0) + dt * float(np.sum(terms))
