"""Parallel-in-time continuous-time MAP trajectory estimation."""

from ._linalg import NumericError
from .elements import (ConditionalElement, GaussianState, UninformativeError, ValueFunction,
                       combine, element_over, extract_value_function, forward_refine,
                       identity_element, init_element, init_elements, make_abar0,
                       terminal_element, value_to_gaussian)
from .estimators import METHODS, estimate_map
from .ieks import DivergenceError, IterationTrace, iterated_map, linearize_about
from .model import (EvaluationError, LinearAffineModel, MeasurementSeries, NodeValues,
                    NonlinearModel, ParameterError, TimeGrid, Trajectory, Violation,
                    build_time_grid, constant_model, validate_model)
from .models import coordinated_turn_model, simulate, wiener_velocity_model
from .om import ReversedControlProblem, control_cost, om_cost, reverse_problem, reverse_trajectory
from .parallel import (MapEstimate, ParallelOptions, TransitionElement, backward_pass_parallel,
                       combine_transitions, forward_pass_parallel, initial_state,
                       parallel_rts_map, parallel_tf_map, transition_elements)
from .scan import ScanPlan, ScanStats, scan, sequential_scan
from .sequential import (FilterResult, kalman_bucy_filter, riccati_backward_seq,
                         rts_smoother_seq, two_filter_seq)

__all__ = [name for name in dir() if not name.startswith("_")]
