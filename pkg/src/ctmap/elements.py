"""Conditional value functions of the linear-quadratic tracking problem.

An element ``(A, b, C, eta, J)`` over ``[s, gamma]`` parameterizes

    V(phi, s; z, gamma) = 1/2 phi^T J phi - phi^T eta
                          + 1/2 (z - A phi - b)^T C^{-1} (z - A phi - b) + const.

All functions accept arbitrary leading batch axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._linalg import (NumericError, mT, mv, run_chunked, singular_floor, spd_solve,
                      sym)
from .model import ParameterError
from .om import ReversedControlProblem
from .scan import Batched

SPAN_TOL = 1e-9


class UninformativeError(NumericError):
    """The information matrix is singular: the data do not pin down the state."""


@dataclass(frozen=True)
class ConditionalElement(Batched):
    A: np.ndarray
    b: np.ndarray
    C: np.ndarray
    eta: np.ndarray
    J: np.ndarray
    start: np.ndarray
    end: np.ndarray

    @classmethod
    def stack(cls, items):
        return cls(**{k: np.stack([np.asarray(getattr(e, k)) for e in items])
                      for k in ("A", "b", "C", "eta", "J", "start", "end")})


@dataclass(frozen=True)
class ValueFunction(Batched):
    """V(phi, tau) = 1/2 phi^T S phi - v^T phi + const."""

    S: np.ndarray
    v: np.ndarray
    time: np.ndarray


@dataclass(frozen=True)
class GaussianState(Batched):
    m: np.ndarray
    P: np.ndarray
    time: np.ndarray


def identity_element(n: int, at: float = np.nan) -> ConditionalElement:
    """Zero-span element: the neutral element of :func:`combine`."""
    z = np.zeros(n)
    return ConditionalElement(np.eye(n), z, np.zeros((n, n)), z.copy(),
                              np.zeros((n, n)), np.float64(at), np.float64(at))


def _check_spans(e1, e2):
    a, b = np.asarray(e1.end, float), np.asarray(e2.start, float)
    both = np.isfinite(a) & np.isfinite(b)
    gap = np.where(both, np.abs(a - b), 0.0)
    if np.any(gap > SPAN_TOL):
        raise ParameterError(f"element spans are not contiguous (gap {gap.max():.3g})")


def combine(e1: ConditionalElement, e2: ConditionalElement) -> ConditionalElement:
    """V(., s; ., t) = V(., s; ., gamma) (x) V(., gamma; ., t) with e1 on [s, gamma].

    One solve with M = I + C1 J2 serves all five parameters, using
    (I + J2 C1)^{-1} = M^{-T}.
    """
    _check_spans(e1, e2)
    n = e1.A.shape[-1]
    M = np.eye(n) + e1.C @ e2.J
    rhs = np.concatenate(
        [e1.A, (e1.b + mv(e1.C, e2.eta))[..., None], e1.C], axis=-1)
    try:
        X = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericError("I + C1 J2 is singular in combine") from exc
    XA, Xb, XC = X[..., :n], X[..., n], X[..., n + 1:]
    A = e2.A @ XA
    b = mv(e2.A, Xb) + e2.b
    C = sym(e2.A @ XC @ mT(e2.A) + e2.C)
    eta = mv(mT(XA), e2.eta - mv(e2.J, e1.b)) + e1.eta
    J = sym(mT(XA) @ e2.J @ e1.A + e1.J)
    s1, t2 = np.asarray(e1.start, float), np.asarray(e2.end, float)
    start = np.where(np.isnan(s1), np.asarray(e2.start, float), s1)
    end = np.where(np.isnan(t2), np.asarray(e1.end, float), t2)
    return ConditionalElement(A, b, C, eta, J, start, end)


def terminal_element(m0: np.ndarray, P0: np.ndarray, at: float = np.nan) -> ConditionalElement:
    """Embed the prior cost -log N(phi; m0, P0) as a zero-span element.

    With A = b = C = 0 the suffix combination's (J, eta) equals (S, v).
    """
    m0, P0 = np.asarray(m0, float), np.asarray(P0, float)
    n = m0.shape[-1]
    try:
        J = sym(spd_solve(P0, np.eye(n), "P0"))
    except NumericError as exc:
        raise NumericError("P0 must be symmetric positive definite") from exc
    eta = spd_solve(P0, m0, "P0")
    z = np.zeros((n, n))
    return ConditionalElement(z, np.zeros(n), z.copy(), eta, J, np.float64(at), np.float64(at))


def extract_value_function(e: ConditionalElement) -> ValueFunction:
    return ValueFunction(S=e.J, v=e.eta, time=np.asarray(e.start, float))


def value_to_gaussian(V: ValueFunction, t_final: float, floor: float = 1e-12) -> GaussianState:
    """P = S^{-1}, m = S^{-1} v at original time t = t_final - tau."""
    eigs = np.linalg.eigvalsh(V.S)
    if np.any(singular_floor(eigs, floor)):
        raise UninformativeError("information matrix S is singular: uninformative posterior")
    P = sym(spd_solve(V.S, np.broadcast_to(np.eye(V.S.shape[-1]), V.S.shape), "S"))
    m = spd_solve(V.S, V.v, "S")
    return GaussianState(m=m, P=P, time=t_final - np.asarray(V.time, float))


def value_element(V: ValueFunction) -> ConditionalElement:
    """A value function as a zero-span element (same embedding as the terminal)."""
    z = np.zeros_like(V.S)
    t = np.asarray(V.time, float)
    return ConditionalElement(z, np.zeros_like(V.v), z.copy(), V.v, V.S, t, t)


def make_abar0(a0: ConditionalElement, floor: float = 1e-12) -> ConditionalElement:
    """Eliminate the free initial state of the first element.

    Limit of ``combine(e_kappa, a0)`` as kappa -> inf with
    e_kappa = (0, 0, kappa I, 0, 0).
    """
    eigs = np.linalg.eigvalsh(a0.J)
    if np.any(singular_floor(eigs, floor)):
        raise UninformativeError(
            "first-block information J0 is singular; widen the first block or "
            "supply measurements that observe every state within it")
    n = a0.A.shape[-1]
    X = spd_solve(a0.J, np.concatenate([mT(a0.A), a0.eta[..., None]], axis=-1), "J0")
    JiAt, Jieta = X[..., :n], X[..., n]
    return ConditionalElement(
        A=np.zeros_like(a0.A), b=mv(a0.A, Jieta) + a0.b,
        C=sym(a0.A @ JiAt + a0.C), eta=a0.eta, J=a0.J,
        start=a0.start, end=a0.end)


# ------------------------------------------------------------ ODE integration


def _backward_rhs(state, coef):
    A, b, C, eta, J = state
    F, c, Q, G, g = coef
    AQ = A @ Q
    JQ = J @ Q
    dA = AQ @ J - A @ F
    db = -mv(AQ, eta) - mv(A, c)
    dC = -AQ @ mT(A)
    deta = mv(JQ, eta) - mv(mT(F), eta) - g + mv(J, c)
    dJ = JQ @ J - J @ F - mT(F) @ J - G
    return dA, db, dC, deta, dJ


def _axpy(state, d, h):
    return tuple(x + h * dx for x, dx in zip(state, d))


def _clean(state):
    A, b, C, eta, J = state
    return A, b, sym(C), eta, sym(J)


def _backward_step(state, coef, dt, method):
    if method == "euler":
        return _clean(_axpy(state, _backward_rhs(state, coef), -dt))
    if method == "rk4":
        k1 = _backward_rhs(state, coef)
        k2 = _backward_rhs(_axpy(state, k1, -dt / 2), coef)
        k3 = _backward_rhs(_axpy(state, k2, -dt / 2), coef)
        k4 = _backward_rhs(_axpy(state, k3, -dt), coef)
        d = tuple((a + 2 * b + 2 * c + e) / 6 for a, b, c, e in zip(k1, k2, k3, k4))
        return _clean(_axpy(state, d, -dt))
    raise ParameterError(f"unknown integrator {method!r}")


def _boundary_state(batch, n):
    eye = np.broadcast_to(np.eye(n), (batch, n, n)).copy()
    zv, zm = np.zeros((batch, n)), np.zeros((batch, n, n))
    return eye, zv, zm, zv.copy(), zm.copy()


def _integrate_backward(coefs, dt, method, keep):
    """Integrate element ODEs backward over ``steps`` intervals for a batch.

    ``coefs`` arrays have shape (batch, steps, ...).  Returns the final state and,
    if ``keep``, the states at every substep start (batch, steps, ...).
    """
    batch, steps = coefs[0].shape[:2]
    n = coefs[0].shape[-1]
    state = _boundary_state(batch, n)
    kept = [np.empty((batch, steps) + x.shape[1:]) for x in state] if keep else None
    for m in range(steps - 1, -1, -1):
        state = _backward_step(state, tuple(c[:, m] for c in coefs), dt, method)
        if not all(np.all(np.isfinite(x)) for x in state):
            raise NumericError(f"non-finite element state at substep {m}")
        if keep:
            for buf, x in zip(kept, state):
                buf[:, m] = x
    return state, kept


def _coef_blocks(problem: ReversedControlProblem, first_node: int, blocks: int, length: int):
    j = first_node + np.arange(blocks * length)
    return tuple(np.ascontiguousarray(x).reshape((blocks, length) + x.shape[1:])
                 for x in problem.interval(j))


def element_over(problem: ReversedControlProblem, start_node: int, end_node: int,
                 method: str = "euler") -> ConditionalElement:
    """Element over the tau-grid node range ``[start_node, end_node]``."""
    if not 0 <= start_node <= end_node <= problem.grid.steps:
        raise ParameterError("node range outside the grid")
    n = problem.n_x
    tau = problem.grid.node_times
    if end_node == start_node:
        return identity_element(n, tau[start_node])
    coefs = _coef_blocks(problem, start_node, 1, end_node - start_node)
    (A, b, C, eta, J), _ = _integrate_backward(coefs, problem.grid.dt, method, False)
    return ConditionalElement(A[0], b[0], C[0], eta[0], J[0],
                              np.float64(tau[start_node]), np.float64(tau[end_node]))


def init_element(problem: ReversedControlProblem, block: int,
                 method: str = "euler") -> ConditionalElement:
    """Element of block ``block`` (``substeps`` Euler steps from its right end)."""
    n = problem.grid.substeps
    return element_over(problem, block * n, (block + 1) * n, method)


def init_elements(problem: ReversedControlProblem, method: str = "euler",
                  workers: int = 1, keep_substeps: bool = False):
    """Elements of all blocks at once (vectorized across blocks).

    Returns ``(elements, partial)`` where ``partial`` (if requested) holds, for
    every node ``j < N``, the element from ``tau_j`` to the right end of its block.
    """
    grid = problem.grid
    T, n = grid.blocks, grid.substeps
    tau = grid.node_times
    coefs = _coef_blocks(problem, 0, T, n)

    def work(s):
        return _integrate_backward(tuple(c[s] for c in coefs), grid.dt, method, keep_substeps)

    parts = run_chunked(work, T, workers)
    state = tuple(np.concatenate([p[0][i] for p in parts]) for i in range(5))
    bounds = grid.boundary_indices
    elements = ConditionalElement(*state, tau[bounds[:-1]].copy(), tau[bounds[1:]].copy())
    partial = None
    if keep_substeps:
        kept = tuple(np.concatenate([p[1][i] for p in parts]) for i in range(5))
        flat = tuple(x.reshape((T * n,) + x.shape[2:]) for x in kept)
        block_end = np.repeat(tau[bounds[1:]], n)
        partial = ConditionalElement(*flat, tau[:-1].copy(), block_end)
    return elements, partial


# -------------------------------------------------------- forward refinement


def _forward_rhs(state, coef, full):
    A, b, C, eta, J = state
    F, c, Q, G, g = coef
    CG = C @ G
    dA = -CG @ A + F @ A
    db = mv(C, g) + mv(F, b) + c - mv(CG, b)
    dC = -CG @ C + Q + F @ C + C @ mT(F)
    if not full:
        return dA, db, dC, 0.0 * eta, 0.0 * J
    At = mT(A)
    deta = mv(At, g) - mv(At @ G, b)
    dJ = At @ G @ A
    return dA, db, dC, deta, dJ


def _refine_steps(state, coefs, dt, keep, full=False):
    """Forward Euler over axis 1 of ``coefs``; batch on axis 0."""
    steps = coefs[0].shape[1]
    kept = [np.empty((x.shape[0], steps) + x.shape[1:]) for x in state] if keep else None
    for m in range(steps):
        state = _clean(_axpy(state, _forward_rhs(state, tuple(c[:, m] for c in coefs), full), dt))
        if not all(np.all(np.isfinite(x)) for x in state):
            raise NumericError(f"non-finite forward refinement at step {m}")
        if keep:
            for buf, x in zip(kept, state):
                buf[:, m] = x
    return state, kept


def forward_refine(anchor: ConditionalElement, problem: ReversedControlProblem,
                   to_node: int, full: bool = False) -> ConditionalElement:
    """Extend an element ending at ``tau_i`` to ``tau_{to_node}`` with the forward ODEs.

    Only (A, b, C) evolve unless ``full`` is set; eta and J are then carried.
    """
    grid = problem.grid
    tau = grid.node_times
    start = int(round(float(anchor.end) / grid.dt))
    if not start <= to_node <= grid.steps:
        raise ParameterError("refinement target must lie at or after the anchor end")
    if to_node == start:
        return anchor
    coefs = _coef_blocks(problem, start, 1, to_node - start)
    state = tuple(np.asarray(x, float)[None] for x in
                  (anchor.A, anchor.b, anchor.C, anchor.eta, anchor.J))
    (A, b, C, eta, J), _ = _refine_steps(state, coefs, grid.dt, False, full)
    return ConditionalElement(A[0], b[0], C[0], eta[0], J[0],
                              anchor.start, np.float64(tau[to_node]))


def forward_refine_nodes(anchor: ConditionalElement, problem: ReversedControlProblem):
    """(b, C) of ``forward_refine(anchor, ., j)`` for every node j from the anchor end to N."""
    grid = problem.grid
    start = int(round(float(anchor.end) / grid.dt))
    b0, C0 = np.asarray(anchor.b, float), np.asarray(anchor.C, float)
    if start == grid.steps:
        return b0[None], C0[None]
    coefs = _coef_blocks(problem, start, 1, grid.steps - start)
    state = tuple(np.asarray(x, float)[None] for x in
                  (anchor.A, anchor.b, anchor.C, anchor.eta, anchor.J))
    _, kept = _refine_steps(state, coefs, grid.dt, True)
    b = np.concatenate([b0[None], kept[1][0]])
    C = np.concatenate([C0[None], kept[2][0]])
    return b, C
