"""Small batched linear-algebra helpers shared across modules."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np


class NumericError(ArithmeticError):
    """A computation produced a non-finite or non-factorizable quantity."""


def mT(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + mT(a))


def mv(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Batched matrix-vector product."""
    return (a @ x[..., None])[..., 0]


def eye_like(a: np.ndarray) -> np.ndarray:
    return np.broadcast_to(np.eye(a.shape[-1]), a.shape).copy()


def singular_floor(eigs: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    """True where min eigenvalue < floor * max(1, max eigenvalue)."""
    top = np.maximum(1.0, eigs.max(axis=-1))
    return eigs.min(axis=-1) < floor * top


def spd_solve(m: np.ndarray, rhs: np.ndarray, what: str = "matrix") -> np.ndarray:
    """Solve ``m x = rhs`` for symmetric positive definite (batched) ``m``.

    ``rhs`` may be a vector (``...,n``) or a matrix (``...,n,k``).
    """
    try:
        chol = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        bad = _first_non_pd(m)
        raise NumericError(f"{what} is not positive definite at index {bad}") from exc
    vec = rhs.ndim == m.ndim - 1
    r = rhs[..., None] if vec else rhs
    z = np.linalg.solve(chol, r)
    x = np.linalg.solve(mT(chol), z)
    return x[..., 0] if vec else x


def spd_inv(m: np.ndarray, what: str = "matrix") -> np.ndarray:
    return sym(spd_solve(m, eye_like(m), what))


def _first_non_pd(m: np.ndarray):
    if m.ndim == 2:
        return 0
    flat = m.reshape((-1,) + m.shape[-2:])
    for i, a in enumerate(flat):
        try:
            np.linalg.cholesky(a)
        except np.linalg.LinAlgError:
            return int(i)
    return None


def check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite value in {what}")


def chunk_slices(count: int, workers: int) -> list[slice]:
    """Split ``range(count)`` into at most ``workers`` contiguous slices."""
    workers = max(1, min(workers, count))
    bounds = np.linspace(0, count, workers + 1).round().astype(int)
    return [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def run_chunked(fn: Callable[[slice], object], count: int, workers: int = 1) -> list:
    """Evaluate ``fn`` on contiguous chunks of ``range(count)``, in order.

    Chunking never changes per-item arithmetic, so results are identical for
    any worker count.
    """
    slices = chunk_slices(count, workers)
    if len(slices) <= 1:
        return [fn(s) for s in slices]
    with ThreadPoolExecutor(max_workers=len(slices)) as pool:
        return list(pool.map(fn, slices))
