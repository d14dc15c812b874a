"""Continuous-time state-space models, time grids, measurements and trajectories.

Time-varying coefficients are either constant arrays or callables ``t -> array``.
Everything downstream works on coefficients *sampled* at the grid nodes; the
Euler interval ``[t_k, t_{k+1}]`` always uses the node-``k`` sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from ._linalg import NumericError, mT, mv, singular_floor

Coefficient = Union[np.ndarray, Callable[[float], np.ndarray]]


class ParameterError(ValueError):
    """Invalid argument to a constructor or operation."""


class EvaluationError(NumericError):
    """A user-supplied model function returned a non-finite value."""


# --------------------------------------------------------------------------- grid


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid of ``blocks * substeps + 1`` nodes on ``[t0, tf]``."""

    t0: float
    tf: float
    blocks: int
    substeps: int

    def __post_init__(self):
        if not (np.isfinite(self.t0) and np.isfinite(self.tf)) or self.tf <= self.t0:
            raise ParameterError(f"need tf > t0, got t0={self.t0}, tf={self.tf}")
        if int(self.blocks) != self.blocks or self.blocks < 1:
            raise ParameterError(f"blocks must be a positive integer, got {self.blocks}")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ParameterError(f"substeps must be a positive integer, got {self.substeps}")

    @property
    def steps(self) -> int:
        return self.blocks * self.substeps

    @property
    def dt(self) -> float:
        return (self.tf - self.t0) / self.steps

    @property
    def node_times(self) -> np.ndarray:
        times = self.t0 + np.arange(self.steps + 1) * self.dt
        times[-1] = self.tf
        return times

    @property
    def boundary_indices(self) -> np.ndarray:
        return np.arange(self.blocks + 1) * self.substeps

    def __len__(self) -> int:
        return self.steps + 1

    def refined(self, factor: int = 2) -> "TimeGrid":
        """Same blocks, ``factor`` times as many substeps per block."""
        return TimeGrid(self.t0, self.tf, self.blocks, self.substeps * factor)

    def reversed_axis(self) -> "TimeGrid":
        """The grid of the reversed time ``tau = tf - t`` on ``[0, tf - t0]``."""
        return TimeGrid(0.0, self.tf - self.t0, self.blocks, self.substeps)


def build_time_grid(t0: float, tf: float, T: int, n: int) -> TimeGrid:
    return TimeGrid(float(t0), float(tf), T, n)


# ------------------------------------------------------------------ coefficients


class NodeValues:
    """Piecewise-constant coefficient defined by its values at grid nodes.

    Calling it at ``t`` returns the value of the node at or left of ``t``.
    """

    def __init__(self, grid: TimeGrid, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape[0] != len(grid):
            raise ParameterError(
                f"need {len(grid)} node values, got {values.shape[0]}")
        self.grid = grid
        self.values = values

    def __call__(self, t: float) -> np.ndarray:
        k = int(np.floor((t - self.grid.t0) / self.grid.dt + 1e-9))
        return self.values[min(max(k, 0), self.grid.steps)]


def sample(coef: Coefficient, grid: TimeGrid) -> np.ndarray:
    """Evaluate a coefficient at every grid node -> array with a leading node axis."""
    if isinstance(coef, NodeValues) and coef.grid == grid:
        return coef.values
    if callable(coef):
        return np.stack([np.asarray(coef(t), dtype=float) for t in grid.node_times])
    arr = np.asarray(coef, dtype=float)
    return np.broadcast_to(arr, (len(grid),) + arr.shape)


def _at(coef: Coefficient, t: float) -> np.ndarray:
    return np.asarray(coef(t) if callable(coef) else coef, dtype=float)


@dataclass(frozen=True)
class SampledLinearModel:
    """Node samples of a linear-affine model (leading axis = grid node)."""

    F: np.ndarray
    c: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    r: np.ndarray
    R: np.ndarray
    m0: np.ndarray
    P0: np.ndarray


# ------------------------------------------------------------------------ models


@dataclass(frozen=True, eq=False)
class LinearAffineModel:
    """dx = (F x + c) dt + L dbeta,  y = H x + r + noise.

    ``W`` and ``R`` are spectral densities; ``Q = L W L^T``.  Any of the
    time-dependent fields may be a constant array or a callable of ``t``.
    """

    F: Coefficient
    c: Coefficient
    L: Coefficient
    W: Coefficient
    H: Coefficient
    r: Coefficient
    R: Coefficient
    m0: np.ndarray
    P0: np.ndarray

    @property
    def n_x(self) -> int:
        return int(np.asarray(self.m0).shape[0])

    @property
    def n_y(self) -> int:
        return int(_at(self.H, 0.0).shape[0])

    def Q(self, t: float) -> np.ndarray:
        L = _at(self.L, t)
        return L @ _at(self.W, t) @ L.T

    def sample(self, grid: TimeGrid) -> SampledLinearModel:
        L, W = sample(self.L, grid), sample(self.W, grid)
        return SampledLinearModel(
            F=sample(self.F, grid), c=sample(self.c, grid), Q=L @ W @ mT(L),
            H=sample(self.H, grid), r=sample(self.r, grid), R=sample(self.R, grid),
            m0=np.asarray(self.m0, dtype=float), P0=np.asarray(self.P0, dtype=float))

    # uniform evaluation interface shared with NonlinearModel
    def evaluate(self, states: np.ndarray, grid: TimeGrid):
        s = self.sample(grid)
        f = mv(s.F, states) + s.c
        h = mv(s.H, states) + s.r
        div = np.trace(s.F, axis1=-2, axis2=-1)
        return f, div, h

    def drift(self, x: np.ndarray, t: float) -> np.ndarray:
        return _at(self.F, t) @ x + _at(self.c, t)

    def measure(self, x: np.ndarray, t: float) -> np.ndarray:
        return _at(self.H, t) @ x + _at(self.r, t)

    def drift_jacobian(self, x: np.ndarray, t: float) -> np.ndarray:
        return _at(self.F, t)

    def noise(self, grid: TimeGrid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Node samples of (L, W, R)."""
        return sample(self.L, grid), sample(self.W, grid), sample(self.R, grid)


def constant_model(F, L, W, H, R, m0, P0, c=None, r=None) -> LinearAffineModel:
    F, H = np.asarray(F, float), np.asarray(H, float)
    return LinearAffineModel(
        F=F, c=np.zeros(F.shape[0]) if c is None else np.asarray(c, float),
        L=np.asarray(L, float), W=np.asarray(W, float), H=H,
        r=np.zeros(H.shape[0]) if r is None else np.asarray(r, float),
        R=np.asarray(R, float), m0=np.asarray(m0, float), P0=np.asarray(P0, float))


@dataclass(frozen=True, eq=False)
class NonlinearModel:
    """dx = f(x, t) dt + L dbeta,  y = h(x, t) + noise.

    ``f``, ``h`` and the optional derivative functions must accept ``x`` with
    arbitrary leading batch axes (``x.shape == (..., n_x)``) and a scalar ``t``
    or an array of times broadcastable to ``x.shape[:-1]``.  Missing Jacobians
    fall back to central finite differences; a missing divergence falls back
    to the trace of the drift Jacobian.
    """

    f: Callable
    h: Callable
    L: Coefficient
    W: Coefficient
    R: Coefficient
    m0: np.ndarray
    P0: np.ndarray
    f_jac: Callable | None = None
    f_div: Callable | None = None
    h_jac: Callable | None = None

    @property
    def n_x(self) -> int:
        return int(np.asarray(self.m0).shape[0])

    @property
    def n_y(self) -> int:
        return int(np.asarray(self.h(np.asarray(self.m0, float), 0.0)).shape[-1])

    def drift(self, x, t):
        return np.asarray(self.f(x, t), dtype=float)

    def measure(self, x, t):
        return np.asarray(self.h(x, t), dtype=float)

    def drift_jacobian(self, x, t):
        if self.f_jac is not None:
            return np.asarray(self.f_jac(x, t), dtype=float)
        return finite_difference_jacobian(self.f, x, t)

    def measure_jacobian(self, x, t):
        if self.h_jac is not None:
            return np.asarray(self.h_jac(x, t), dtype=float)
        return finite_difference_jacobian(self.h, x, t)

    def divergence(self, x, t):
        if self.f_div is not None:
            return np.asarray(self.f_div(x, t), dtype=float)
        return np.trace(self.drift_jacobian(x, t), axis1=-2, axis2=-1)

    def Q(self, t: float) -> np.ndarray:
        L = _at(self.L, t)
        return L @ _at(self.W, t) @ L.T

    def evaluate(self, states: np.ndarray, grid: TimeGrid):
        times = grid.node_times
        return (self.drift(states, times), self.divergence(states, times),
                self.measure(states, times))

    def noise(self, grid: TimeGrid):
        return sample(self.L, grid), sample(self.W, grid), sample(self.R, grid)


Model = Union[LinearAffineModel, NonlinearModel]


def finite_difference_jacobian(fn: Callable, x: np.ndarray, t) -> np.ndarray:
    """Central-difference Jacobian with per-coordinate step ``1e-6 (1 + |x_i|)``.

    ``x`` may carry leading batch axes; the result has shape ``(..., m, n)``.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    cols = []
    for i in range(n):
        step = 1e-6 * (1.0 + np.abs(x[..., i]))
        e = np.zeros_like(x)
        e[..., i] = step
        hi = np.asarray(fn(x + e, t), dtype=float)
        lo = np.asarray(fn(x - e, t), dtype=float)
        if not (np.all(np.isfinite(hi)) and np.all(np.isfinite(lo))):
            raise EvaluationError(f"non-finite function value perturbing coordinate {i}")
        cols.append((hi - lo) / (2.0 * step[..., None]))
    return np.stack(cols, axis=-1)


# ------------------------------------------------------------ data containers


@dataclass(frozen=True)
class MeasurementSeries:
    """Zero-order-hold samples of ``y(t)``, one vector per grid node."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[0] != self.times.shape[0]:
            raise ParameterError("measurement values must be (nodes, n_y) matching times")
        if not np.all(np.isfinite(self.values)):
            raise ParameterError("measurement values must be finite")

    def __len__(self) -> int:
        return self.times.shape[0]

    def on(self, grid: TimeGrid) -> "MeasurementSeries":
        """Resample onto ``grid`` by zero-order hold.

        ``grid`` must nest this series' grid (same span, node count a multiple).
        Returns ``self`` when the node count already matches.
        """
        if len(grid) == len(self):
            return self
        coarse = len(self) - 1
        if grid.steps % coarse:
            raise ParameterError("target grid does not nest the measurement grid")
        factor = grid.steps // coarse
        idx = np.minimum(np.arange(len(grid)) // factor, coarse)
        return MeasurementSeries(grid.node_times, self.values[idx])


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    covariances: np.ndarray | None = None

    def __post_init__(self):
        if self.states.shape[0] != self.times.shape[0]:
            raise ParameterError("trajectory length does not match its times")
        if self.covariances is not None:
            asym = np.abs(self.covariances - mT(self.covariances)).max(initial=0.0)
            if asym > 1e-10:
                raise ParameterError(f"trajectory covariances asymmetric by {asym:.3g}")

    def __len__(self) -> int:
        return self.times.shape[0]


# ---------------------------------------------------------------- validation


@dataclass(frozen=True)
class Violation:
    node: int | None
    check: str
    message: str


def _symmetry_violations(name, mats, tol=1e-12):
    out = []
    scale = np.maximum(1.0, np.abs(mats).max(axis=(-2, -1)))
    asym = np.abs(mats - mT(mats)).max(axis=(-2, -1))
    for k in np.flatnonzero(asym > tol * scale):
        out.append(Violation(int(k), "symmetry", f"{name} asymmetric by {asym[k]:.3g}"))
    eigs = np.linalg.eigvalsh(0.5 * (mats + mT(mats)))
    for k in np.flatnonzero(eigs.min(axis=-1) <= 0.0):
        out.append(Violation(int(k), "positive-definite",
                             f"{name} min eigenvalue {eigs[k].min():.3g}"))
    return out


def reach_gramian(F: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """sum_i F^i Q (F^i)^T for i < n_x (batched); PD iff noise reaches all states."""
    n = F.shape[-1]
    total = Q.copy()
    term = Q
    for _ in range(n - 1):
        term = F @ term @ mT(F)
        total = total + term
    return total


def validate_model(model: Model, grid: TimeGrid, floor: float = 1e-12) -> list[Violation]:
    """Report every violated admissibility condition, with its node index.

    A rank-deficient ``Q`` is admissible when the drift carries the noise into
    every state (positive definite reach Gramian, e.g. the Wiener velocity
    model); ``Q`` with no reach, such as ``W = 0``, is reported.
    """
    report: list[Violation] = []
    L, W, R = model.noise(grid)
    report += _symmetry_violations("W", np.array(W))
    report += _symmetry_violations("R", np.array(R))
    report += [Violation(None, v.check, v.message)
               for v in _symmetry_violations("P0", np.asarray(model.P0, float)[None])]
    Q = L @ W @ mT(L)
    m0 = np.asarray(model.m0, float)
    times = grid.node_times
    if isinstance(model, LinearAffineModel):
        F = sample(model.F, grid)
    else:
        x = np.broadcast_to(m0, (len(grid), m0.shape[0]))
        F = model.drift_jacobian(x, times)
        div = model.divergence(x, times)
        gap = np.abs(div - np.trace(F, axis1=-2, axis2=-1))
        for k in np.flatnonzero(gap > 1e-8):
            report.append(Violation(int(k), "divergence",
                                    f"divergence differs from Jacobian trace by {gap[k]:.3g}"))
    eigs = np.linalg.eigvalsh(reach_gramian(F, Q))
    for k in np.flatnonzero(singular_floor(eigs, floor)):
        report.append(Violation(int(k), "Q-singular",
                                f"diffusion Q does not reach all states (min eig {eigs[k].min():.3g})"))
    return report
