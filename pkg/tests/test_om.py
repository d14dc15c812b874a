import numpy as np
import pytest

from ctmap import (MeasurementSeries, NumericError, Trajectory, build_time_grid, control_cost,
                   estimate_map, om_cost, reverse_problem, reverse_trajectory, simulate)
from ctmap.om import gaussian_nll, psd_pinv

from conftest import full_rank_model, scalar_model, zero_measurements
from oracles import dense_qp_map


def test_om_cost_scalar_by_hand():
    m = scalar_model(F=-1.0, Q=2.0, H=1.0, R=0.5, m0=0.0, P0=1.0)
    g = build_time_grid(0.0, 1.0, 1, 2)
    x = np.array([[1.0], [0.5], [0.0]])
    y = MeasurementSeries(g.node_times, np.array([[1.0], [1.0], [1.0]]))
    dt = 0.5
    prior = 0.5 * 1.0 + 0.5 * np.log(2 * np.pi)
    terms = 0.0
    for k in range(2):
        res = (x[k + 1, 0] - x[k, 0]) / dt + x[k, 0]
        err = 1.0 - x[k, 0]
        terms += 0.5 * (-1.0) + 0.5 * res ** 2 / 2.0 + 0.5 * err ** 2 / 0.5
    expected = prior + dt * terms
    assert om_cost(m, Trajectory(g.node_times, x), y, g) == pytest.approx(expected, rel=1e-14)


def test_pinv_and_gaussian_helpers():
    Q = np.diag([2.0, 0.0])
    assert np.allclose(psd_pinv(Q), np.diag([0.5, 0.0]))
    with pytest.raises(NumericError):
        psd_pinv(np.zeros((2, 2)))
    assert gaussian_nll(np.zeros(1), np.zeros(1), np.eye(1)) == pytest.approx(0.5 * np.log(2 * np.pi))


def test_reverse_problem_layout(wiener, wiener_data):
    grid, _, meas = wiener_data
    p = reverse_problem(wiener, meas, grid)
    s = wiener.sample(grid)
    assert np.array_equal(p.F[0], -s.F[-1]) and np.array_equal(p.y[0], meas.values[-1])
    assert np.array_equal(p.y[-1], meas.values[0])
    F, c, Q, G, g = p.interval(0)
    assert np.array_equal(g, p.info[1][1])
    assert p.grid.t0 == 0.0 and p.grid.tf == 5.0


def test_reverse_trajectory_is_involution(wiener_data):
    grid, truth, _ = wiener_data
    back = reverse_trajectory(reverse_trajectory(truth, grid), grid)
    assert np.array_equal(back.states, truth.states)


def test_qp_oracle_is_minimizer_of_om_cost():
    model = full_rank_model()
    grid = build_time_grid(0.0, 2.0, 4, 10)
    _, meas = simulate(model, grid, 3)
    x = dense_qp_map(model, meas, grid)
    best = om_cost(model, Trajectory(grid.node_times, x), meas, grid)
    rng = np.random.default_rng(0)
    for _ in range(20):
        probe = x + 1e-3 * rng.standard_normal(x.shape)
        assert om_cost(model, Trajectory(grid.node_times, probe), meas, grid) > best


@pytest.mark.parametrize("method", ["seq-rts", "par-rts"])
def test_map_cost_gap_to_oracle_shrinks(method):
    """Local optimality up to discretization: the cost excess vanishes with dt."""
    model = full_rank_model()
    base = build_time_grid(0.0, 2.0, 4, 10)
    _, meas = simulate(model, base, 5)
    gaps = []
    for f in (1, 2, 4):
        g = base.refined(f)
        y = meas.on(g)
        opt = om_cost(model, Trajectory(g.node_times, dense_qp_map(model, y, g)), y, g)
        est = om_cost(model, estimate_map(model, y, g, method).trajectory, y, g)
        assert est >= opt - 1e-9
        gaps.append(est - opt)
    assert gaps[2] < gaps[1] < gaps[0]


def test_control_cost_matches_om_cost_in_the_limit():
    """Both discretize the same functional (left endpoint in t versus in tau)."""
    model = scalar_model(F=-0.5, Q=1.0)
    diffs = []
    for n in (20, 40, 80):
        g = build_time_grid(0.0, 1.0, 1, n)
        x = np.sin(3 * g.node_times)[:, None]
        meas = zero_measurements(g)
        om = om_cost(model, Trajectory(g.node_times, x), meas, g)
        p = reverse_problem(model, meas, g)
        cc = control_cost(p, x[::-1])
        diffs.append(abs(om - cc))
    assert diffs[2] < diffs[1] < diffs[0]
