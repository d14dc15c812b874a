import numpy as np
import pytest
from hypothesis import settings

from ctmap import build_time_grid, constant_model, simulate, wiener_velocity_model
from ctmap.model import MeasurementSeries

settings.register_profile("ci", max_examples=40, deadline=None)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def wiener():
    return wiener_velocity_model()


@pytest.fixture(scope="session")
def wiener_data(wiener):
    """Seeded run on the base grid T=100, n=10 over [0, 5]."""
    grid = build_time_grid(0.0, 5.0, 100, 10)
    truth, meas = simulate(wiener, grid, 7)
    return grid, truth, meas


def scalar_model(F=0.0, Q=1.0, H=1.0, R=1.0, m0=0.0, P0=1.0, c=0.0):
    return constant_model([[F]], [[1.0]], [[Q]], [[H]], [[R]], [m0], [[P0]], c=[c])


def zero_measurements(grid, n_y=1):
    return MeasurementSeries(grid.node_times, np.zeros((len(grid), n_y)))


def full_rank_model():
    """Two-state linear model with invertible Q (every direction is driven)."""
    F = np.array([[-0.5, 1.0], [-1.0, -0.3]])
    return constant_model(F, np.eye(2), np.diag([0.5, 0.8]), [[1.0, 0.0]], [[0.05]],
                          m0=[1.0, -1.0], P0=0.1 * np.eye(2), c=[0.2, 0.0])


def order(errors):
    """Observed convergence orders for errors under successive halving."""
    e = np.asarray(errors, float)
    return np.log2(e[:-1] / e[1:])


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
