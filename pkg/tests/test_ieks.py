import itertools

import numpy as np
import pytest

import ctmap.ieks as ieks
from ctmap import (DivergenceError, EvaluationError, NonlinearModel, Trajectory, build_time_grid,
                   coordinated_turn_model, estimate_map, iterated_map, linearize_about, simulate)
from ctmap.ieks import prior_nominal

M = np.array([[-0.4, 1.0], [-1.0, -0.2]])
H = np.array([[1.0, 0.0]])


def disguised_linear():
    return NonlinearModel(f=lambda x, t: np.einsum("ij,...j->...i", M, x),
                          h=lambda x, t: np.einsum("ij,...j->...i", H, x),
                          L=np.eye(2), W=0.3 * np.eye(2), R=np.array([[0.05]]),
                          m0=np.array([1.0, 0.0]), P0=0.2 * np.eye(2))


@pytest.fixture(scope="module")
def ct_run():
    model = coordinated_turn_model()
    grid = build_time_grid(0.0, 5.0, 100, 10)
    _, meas = simulate(model, grid, 3)
    return model, grid, meas


def test_linearization_exact_on_linear_model():
    model = disguised_linear()
    g = build_time_grid(0.0, 1.0, 2, 5)
    nominal = Trajectory(g.node_times, np.random.default_rng(0).standard_normal((len(g), 2)))
    lin = linearize_about(model, nominal, g)
    s = lin.sample(g)
    assert np.allclose(s.F, M, atol=1e-7) and np.allclose(s.c, 0, atol=1e-7)
    assert np.allclose(s.H, H, atol=1e-7) and np.allclose(s.r, 0, atol=1e-7)


def test_coordinated_turn_linearization_by_hand():
    model = coordinated_turn_model()
    g = build_time_grid(0.0, 1.0, 1, 2)
    xbar = np.array([5.0, 5.0, 0.0, 0.3, 0.0])
    lin = linearize_about(model, Trajectory(g.node_times, np.tile(xbar, (3, 1))), g)
    s = lin.sample(g)
    F = np.zeros((5, 5))
    F[0, 2] = F[1, 3] = 1.0
    F[2, 4] = -0.3
    assert np.array_equal(s.F[0], F)
    assert np.allclose(s.c[0], np.array([0.0, 0.3, 0, 0, 0]) - F @ xbar)


def test_range_bearing_gradient():
    model = coordinated_turn_model()
    x = np.array([3.0, 4.0, 0.1, 0.2, 0.0])
    assert model.measure(x, 0.0) == pytest.approx([5.0, np.arctan2(4, 3)])
    Hx = model.measure_jacobian(x, 0.0)
    assert Hx[0] == pytest.approx([0.6, 0.8, 0, 0, 0])
    assert Hx[1] == pytest.approx([-4 / 25, 3 / 25, 0, 0, 0])


def test_linearization_names_bad_node():
    model = coordinated_turn_model()
    g = build_time_grid(0.0, 1.0, 1, 4)
    x = np.tile([1.0, 1.0, 0.0, 0.0, 0.0], (5, 1))
    x[2, :2] = 0.0  # range-bearing Jacobian is undefined at the origin
    with np.errstate(all="ignore"), pytest.raises(EvaluationError, match="node 2"):
        linearize_about(model, Trajectory(g.node_times, x), g)


def test_disguised_linear_model_is_a_fixed_point():
    model = disguised_linear()
    lin_model = linearize_about(model, Trajectory(*_zeros(build_time_grid(0.0, 2.0, 8, 5))),
                                build_time_grid(0.0, 2.0, 8, 5))
    g = build_time_grid(0.0, 2.0, 8, 5)
    _, meas = simulate(lin_model, g, 1)
    traj, trace = iterated_map(model, meas, g, iters=3, tol=0.0)
    assert trace.max_changes[1] < 1e-10
    direct = estimate_map(lin_model, meas, g, "par-rts").trajectory
    assert np.max(np.abs(trace.iterates[0] - direct.states)) < 1e-10


def _zeros(grid):
    return grid.node_times, np.zeros((len(grid), 2))


def test_coordinated_turn_cost_decreases_then_settles(ct_run):
    """Cost drops until the iterates converge; later rises are O(dt) and tiny."""
    model, grid, meas = ct_run
    rises = []
    for f in (1, 2):
        g = grid.refined(f)
        _, trace = iterated_map(model, meas.on(g), g, backend="par-rts", iters=6, tol=0.0)
        assert trace.iterations_run == 6 == len(trace.max_changes)
        costs = np.array(trace.costs)
        assert costs[1] < costs[0] and costs[2] < costs[1] and costs[-1] < costs[0]
        assert np.all(np.diff(trace.max_changes) < 0)
        rise = np.max(np.diff(costs))
        assert rise < 1e-4 * abs(costs[-1])
        rises.append(rise)
    assert rises[1] < rises[0]


def test_prior_nominal_is_euler_mean(ct_run):
    model, grid, _ = ct_run
    nom = prior_nominal(model, grid)
    assert np.array_equal(nom.states[0], model.m0)
    assert np.allclose(nom.states[1], model.m0 + grid.dt * model.drift(model.m0, 0.0))


def test_backends_agree_first_order(ct_run):
    model, grid, meas = ct_run
    gaps = []
    for f in (1, 2, 4):
        g = grid.refined(f)
        _, ta = iterated_map(model, meas, g, backend="par-rts", iters=3)
        _, tb = iterated_map(model, meas, g, backend="seq-rts", iters=3)
        gaps.append([np.max(np.abs(a - b)) for a, b in zip(ta.iterates, tb.iterates)])
    gaps = np.array(gaps)
    assert np.all(gaps[1] < gaps[0]) and np.all(gaps[2] < gaps[1])
    assert np.all(gaps[1] / gaps[2] >= 1.5)


def test_divergence_is_reported(monkeypatch, ct_run):
    model, grid, meas = ct_run
    counter = itertools.count(1)
    monkeypatch.setattr(ieks, "om_cost", lambda *a: float(next(counter)))
    real = ieks.estimate_map

    def wandering(lin, y, g, backend, options):
        est = real(lin, y, g, backend, options)
        est.trajectory.states[:] += next(counter)  # every step moves further
        return est

    monkeypatch.setattr(ieks, "estimate_map", wandering)
    with pytest.raises(DivergenceError) as info:
        iterated_map(model, meas, grid, iters=10)
    assert len(info.value.trace.costs) == 4


def test_contracting_rises_are_not_divergence(monkeypatch, ct_run):
    model, grid, meas = ct_run
    counter = itertools.count(1)
    monkeypatch.setattr(ieks, "om_cost", lambda *a: float(next(counter)))
    _, trace = iterated_map(model, meas, grid, iters=6, tol=0.0)
    assert trace.iterations_run == 6


def test_rejects_zero_iterations(ct_run):
    model, grid, meas = ct_run
    with pytest.raises(ValueError):
        iterated_map(model, meas, grid, iters=0)
