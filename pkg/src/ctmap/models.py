"""Benchmark models and Euler-Maruyama simulation."""

from __future__ import annotations

import numpy as np

from ._linalg import NumericError
from .model import (LinearAffineModel, MeasurementSeries, Model, NonlinearModel,
                    TimeGrid, Trajectory, constant_model)


def wiener_velocity_model(W: float | np.ndarray = 4.0, R: float | np.ndarray = 1e-2) -> LinearAffineModel:
    """Partially observed Wiener velocity model in two dimensions.

    State (x, y, vx, vy); only positions are measured.  Scalars for ``W`` and
    ``R`` are multiples of the 2x2 identity.
    """
    I2, Z2 = np.eye(2), np.zeros((2, 2))
    F = np.block([[Z2, I2], [Z2, Z2]])
    L = np.vstack([Z2, I2])
    H = np.hstack([I2, Z2])
    Wm = np.asarray(W, float) * I2 if np.ndim(W) == 0 else np.asarray(W, float)
    Rm = np.asarray(R, float) * I2 if np.ndim(R) == 0 else np.asarray(R, float)
    return constant_model(F, L, Wm, H, Rm, m0=np.array([5.0, 5.0, 0.0, 0.0]),
                          P0=1e-2 * np.eye(4))


WIENER_SPAN = (0.0, 5.0)


def _ct_drift(x, t):
    x = np.asarray(x, float)
    vx, vy, w = x[..., 2], x[..., 3], x[..., 4]
    return np.stack([vx, vy, -w * vy, w * vx, np.zeros_like(w)], axis=-1)


def _ct_drift_jac(x, t):
    x = np.asarray(x, float)
    vx, vy, w = x[..., 2], x[..., 3], x[..., 4]
    J = np.zeros(x.shape + (5,))
    J[..., 0, 2] = 1.0
    J[..., 1, 3] = 1.0
    J[..., 2, 3] = -w
    J[..., 2, 4] = -vy
    J[..., 3, 2] = w
    J[..., 3, 4] = vx
    return J


def _ct_div(x, t):
    return np.zeros(np.shape(x)[:-1])


def _range_bearing(x, t):
    x = np.asarray(x, float)
    px, py = x[..., 0], x[..., 1]
    return np.stack([np.hypot(px, py), np.arctan2(py, px)], axis=-1)


def _range_bearing_jac(x, t):
    x = np.asarray(x, float)
    px, py = x[..., 0], x[..., 1]
    r2 = px ** 2 + py ** 2
    r = np.sqrt(r2)
    J = np.zeros(x.shape[:-1] + (2, x.shape[-1]))
    J[..., 0, 0] = px / r
    J[..., 0, 1] = py / r
    J[..., 1, 0] = -py / r2
    J[..., 1, 1] = px / r2
    return J


def coordinated_turn_model() -> NonlinearModel:
    """Coordinated turn dynamics with range-bearing measurements from the origin.

    State (x, y, vx, vy, omega).
    """
    L = np.zeros((5, 3))
    L[2, 0] = L[3, 1] = 5e-4
    L[4, 2] = 0.02
    return NonlinearModel(
        f=_ct_drift, h=_range_bearing, L=L, W=np.eye(3), R=np.diag([5e-3, 1e-3]),
        m0=np.array([5.0, 5.0, 0.0, 0.3, 0.0]), P0=np.diag([0.01, 0.01, 0.01, 0.01, 0.04]),
        f_jac=_ct_drift_jac, f_div=_ct_div, h_jac=_range_bearing_jac)


CT_SPAN = (0.0, 5.0)


def simulate(model: Model, grid: TimeGrid, seed: int) -> tuple[Trajectory, MeasurementSeries]:
    """Euler-Maruyama sample path and measurements with noise N(0, R / dt).

    Uses a counter-based Philox generator, so a seed fixes the output bitwise.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    dt = grid.dt
    times = grid.node_times
    L, W, R = model.noise(grid)
    n_x, n_w = model.n_x, L.shape[-1]
    x = np.empty((len(grid), n_x))
    x[0] = rng.multivariate_normal(np.asarray(model.m0, float), np.asarray(model.P0, float),
                                   method="cholesky")
    xi = rng.standard_normal((grid.steps, n_w))
    W_chol = _psd_sqrt(W)
    for k in range(grid.steps):
        dw = W_chol[k] @ xi[k] * np.sqrt(dt)
        x[k + 1] = x[k] + model.drift(x[k], times[k]) * dt + L[k] @ dw
        if not np.all(np.isfinite(x[k + 1])):
            raise NumericError(f"simulation blew up at node {k + 1}")
    h = model.measure(x, times) if not isinstance(model, LinearAffineModel) else \
        np.stack([model.measure(x[k], t) for k, t in enumerate(times)])
    nu = rng.standard_normal(h.shape)
    R_chol = _psd_sqrt(R)
    y = h + np.einsum("kij,kj->ki", R_chol, nu) / np.sqrt(dt)
    return Trajectory(times, x), MeasurementSeries(times, y)


def _psd_sqrt(M):
    """Lower Cholesky factor per node; zero matrices map to zero."""
    M = np.asarray(M, float)
    out = np.zeros_like(M)
    ok = np.abs(M).max(axis=(-2, -1)) > 0
    if np.any(ok):
        out[ok] = np.linalg.cholesky(M[ok])
    return out
