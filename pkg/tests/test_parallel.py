import math

import numpy as np
import pytest

import ctmap.parallel as par
from ctmap import (ParallelOptions, TransitionElement, ValueFunction, backward_pass_parallel,
                   build_time_grid, combine, combine_transitions, constant_model, estimate_map,
                   forward_pass_parallel, init_element, initial_state, kalman_bucy_filter,
                   parallel_rts_map, parallel_tf_map, reverse_problem, riccati_backward_seq,
                   simulate, terminal_element, transition_elements)
from ctmap.model import MeasurementSeries

from conftest import order, scalar_model, zero_measurements


def refined_data(wiener_data, factor):
    grid, _, meas = wiener_data
    g = grid.refined(factor)
    return g, meas.on(g)


def gap(a, b):
    return float(np.max(np.abs(a.states - b.states)))


# ---------------------------------------------------------------- backward pass


def test_single_block_is_one_combination(wiener, wiener_data):
    grid, _, meas = wiener_data
    g = build_time_grid(0.0, 0.05, 1, 10)
    y = MeasurementSeries(g.node_times, meas.values[:11])
    p = reverse_problem(wiener, y, g)
    back = backward_pass_parallel(p, dense=False)
    ref = combine(init_element(p, 0), terminal_element(p.m0, p.P0, p.grid.tf))
    assert np.array_equal(back.boundary.S[0], ref.J)
    assert np.array_equal(back.boundary.v[0], ref.eta)


def test_boundary_values_converge_to_riccati(wiener, wiener_data):
    errs = []
    for f in (4, 8, 16):
        g, y = refined_data(wiener_data, f)
        p = reverse_problem(wiener, y, g)
        back = backward_pass_parallel(p, dense=False)
        ric = riccati_backward_seq(p)
        b = g.boundary_indices
        scale = np.max(np.abs(ric.S[b]))
        errs.append(float(np.max(np.abs(back.boundary.S - ric.S[b]))) / scale)
    assert np.all(order(errs) >= 0.9)


def test_dense_values_agree_with_boundaries(wiener, wiener_data):
    g, y = refined_data(wiener_data, 1)
    back = backward_pass_parallel(reverse_problem(wiener, y, g))
    b = g.boundary_indices
    assert np.array_equal(back.dense.S[b], back.boundary.S)
    assert np.all(np.linalg.eigvalsh(back.dense.S)[:, 0] > 0)


def test_scalar_fixed_point_boundaries_first_order():
    errs = []
    for n in (5, 10, 20):
        g = build_time_grid(0.0, 2.0, 8, n)
        p = reverse_problem(scalar_model(F=0.0, Q=1.0, H=1.0, R=1.0, P0=1.0),
                            zero_measurements(g), g)
        errs.append(float(np.max(np.abs(backward_pass_parallel(p, dense=False).boundary.S - 1))))
    assert np.all(order(errs) >= 0.9)


# ----------------------------------------------------------------- forward pass


def test_initial_state_examples():
    V = ValueFunction(np.eye(2), np.zeros(2), np.float64(0))
    assert np.array_equal(initial_state(V), np.zeros(2))
    P0, m0 = np.array([[0.5, 0.1], [0.1, 0.2]]), np.array([3.0, -1.0])
    t = terminal_element(m0, P0)
    assert np.allclose(initial_state(ValueFunction(t.J, t.eta, np.float64(0))), m0)
    with pytest.raises(par.NumericError, match="uninformative"):
        initial_state(ValueFunction(np.zeros((2, 2)), np.zeros(2), np.float64(0)))


def test_initial_state_matches_filter_at_tf(wiener, wiener_data):
    g, y = refined_data(wiener_data, 4)
    back = backward_pass_parallel(reverse_problem(wiener, y, g), dense=False)
    filt = kalman_bucy_filter(wiener, y, g)
    gap0 = np.max(np.abs(initial_state(back.boundary.take(0)) - filt.means[-1]))
    assert gap0 < 0.05


def test_transition_elements_closed_forms():
    # F_bar = 0, c_bar = k  <=>  S = 0 and F = 0, c = k: use a hand-made value function
    g = build_time_grid(0.0, 1.0, 2, 5)
    p = reverse_problem(scalar_model(F=0.0, Q=1.0, H=1.0, c=0.0), zero_measurements(g), g)
    N = g.steps
    zero = ValueFunction(np.zeros((N + 1, 1, 1)), np.zeros((N + 1, 1)), g.node_times)
    t = transition_elements(p, zero)
    assert np.array_equal(t.Phi, np.ones((2, 1, 1))) and np.array_equal(t.beta, np.zeros((2, 1)))
    k = 0.7
    drift = ValueFunction(np.zeros((N + 1, 1, 1)), np.full((N + 1, 1), k), g.node_times)
    t = transition_elements(p, drift)
    assert t.beta[:, 0] == pytest.approx([k * 0.5, k * 0.5], abs=1e-15)


def test_transition_exponential_first_order():
    a = -0.8
    errs = []
    for n in (10, 20, 40):
        g = build_time_grid(0.0, 1.0, 1, n)
        p = reverse_problem(scalar_model(F=-a, Q=1.0, H=1.0), zero_measurements(g), g)
        # reversed drift is +a; zero value function leaves F_bar = a
        V = ValueFunction(np.zeros((n + 1, 1, 1)), np.zeros((n + 1, 1)), g.node_times)
        Phi = transition_elements(p, V).Phi[0, 0, 0]
        assert Phi == pytest.approx((1 + a / n) ** n, rel=1e-13)
        errs.append(abs(Phi - math.exp(a)))
    assert np.all(order(errs) >= 0.9)


def test_transition_composition_by_hand():
    t = TransitionElement(np.array([[[2.0]], [[3.0]]]), np.array([[1.0], [0.0]]),
                          np.array([0.0, 1.0]), np.array([1.0, 2.0]))
    both = combine_transitions(t.take(0), t.take(1))
    assert both.Phi[0, 0] == 6.0 and both.beta[0] == 3.0
    states = forward_pass_parallel(t, np.array([1.0]))
    assert states[:, 0].tolist() == [1.0, 3.0, 9.0]
    with pytest.raises(par.ParameterError):
        combine_transitions(t.take(1), t.take(0))


def test_identity_transitions_keep_state():
    T = 37
    t = TransitionElement(np.tile(np.eye(2), (T, 1, 1)), np.zeros((T, 2)),
                          np.arange(T, dtype=float), np.arange(1, T + 1, dtype=float))
    states = forward_pass_parallel(t, np.array([1.5, -2.0]))
    assert np.array_equal(states, np.tile([1.5, -2.0], (T + 1, 1)))


def test_transition_scan_matches_sequential_product(wiener, wiener_data):
    g, y = refined_data(wiener_data, 1)
    p = reverse_problem(wiener, y, g)
    back = backward_pass_parallel(p)
    trans = transition_elements(p, back.dense)
    phi0 = initial_state(back.boundary.take(0))
    states = forward_pass_parallel(trans, phi0)
    x = phi0.copy()
    for i in range(len(trans)):
        x = trans.Phi[i] @ x + trans.beta[i]
        assert np.max(np.abs(states[i + 1] - x)) <= 1e-10 * (1 + np.max(np.abs(x)))


# ------------------------------------------------------------------- estimators


@pytest.mark.parametrize("pair", [("par-rts", "seq-rts"), ("par-tf", "par-rts")])
def test_methods_agree_first_order(wiener, wiener_data, pair):
    gaps = []
    for f in (2, 4, 8):
        g, y = refined_data(wiener_data, f)
        a, b = (estimate_map(wiener, y, g, m).trajectory for m in pair)
        gaps.append(gap(a, b))
    assert np.all(order(gaps) >= 0.9)


def test_prior_only_follows_mean_ode():
    F, c, m0 = -0.5, 1.0, 4.0
    model = scalar_model(F=F, Q=0.3, H=0.0, m0=m0, P0=0.2, c=c)
    errs = []
    for n in (10, 20, 40):
        g = build_time_grid(0.0, 2.0, 4, n)
        traj = parallel_rts_map(model, zero_measurements(g), g).trajectory
        exact = -c / F + (m0 + c / F) * np.exp(F * g.node_times)
        errs.append(float(np.max(np.abs(traj.states[:, 0] - exact))))
    assert np.all(order(errs) >= 0.9)


@pytest.mark.parametrize("method", ["par-rts", "par-tf", "seq-rts", "seq-tf"])
def test_stationary_model_gives_constant_trajectory(method):
    model = scalar_model(F=0.0, Q=0.5, H=1.0, R=0.1, m0=2.5, P0=0.3)
    g = build_time_grid(0.0, 1.0, 10, 10)
    y = MeasurementSeries(g.node_times, np.full((len(g), 1), 2.5))
    traj = estimate_map(model, y, g, method).trajectory
    assert np.max(np.abs(traj.states - 2.5)) < 1e-10


def test_tf_start_matches_rts_start(wiener, wiener_data):
    g, y = refined_data(wiener_data, 4)
    rts = parallel_rts_map(wiener, y, g).trajectory
    tf = parallel_tf_map(wiener, y, g).trajectory
    assert np.max(np.abs(tf.states[0] - rts.states[0])) < 0.05


def test_filter_marginals_match_kalman_bucy(wiener, wiener_data):
    errs = []
    for f in (4, 8):
        g, y = refined_data(wiener_data, f)
        est = parallel_rts_map(wiener, y, g)
        kb = kalman_bucy_filter(wiener, y, g)
        b = g.boundary_indices
        errs.append(float(np.max(np.abs(est.filter.means[b] - kb.means[b]))))
    assert errs[1] < errs[0] < 0.5


# ------------------------------------------------------- determinism and stats


@pytest.mark.parametrize("method", ["par-rts", "par-tf"])
def test_bitwise_identical_across_workers(wiener, wiener_data, method):
    grid, _, meas = wiener_data
    outs = [estimate_map(wiener, meas, grid, method, ParallelOptions(workers=w)).trajectory.states
            for w in (1, 2, 8)]
    assert all(np.array_equal(outs[0], o) for o in outs[1:])


def test_scan_depth_is_logarithmic(wiener, wiener_data):
    grid, _, meas = wiener_data
    for method in ("par-rts", "par-tf"):
        est = estimate_map(wiener, meas, grid, method)
        for key, length in (("backward_scan", grid.blocks + 1), ("forward_scan", grid.blocks)):
            stats = est.stats[key]
            assert stats.depth <= math.ceil(math.log2(length + 1)) + 1
            assert stats.combine_calls <= 2 * length


def test_condition_warning(monkeypatch, wiener, wiener_data):
    grid, _, meas = wiener_data
    assert parallel_tf_map(wiener, meas, grid).warnings == []
    monkeypatch.setattr(par, "COND_LIMIT", 1.0)
    warnings = parallel_tf_map(wiener, meas, grid).warnings
    assert len(warnings) == 1 and "ill-conditioned" in warnings[0]


def test_full_rank_model_runs_on_coarse_grid():
    model = constant_model(np.array([[0.0, 1.0], [-1.0, 0.0]]), np.eye(2), 0.5 * np.eye(2),
                           np.eye(2), 0.1 * np.eye(2), [0.0, 1.0], 0.5 * np.eye(2))
    g = build_time_grid(0.0, 3.0, 30, 5)
    _, y = simulate(model, g, 11)
    a = parallel_rts_map(model, y, g).trajectory
    b = parallel_tf_map(model, y, g).trajectory
    assert gap(a, b) < 0.1
