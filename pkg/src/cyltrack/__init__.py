"""Trajectory reconstruction on a partially observed rotating cylinder."""

from .model import (
    Configuration,
    CylinderGeometry,
    DynamicsParams,
    InputEvent,
    InvalidConfiguration,
    OutputEvent,
    ParameterError,
    Point,
    wrap_x,
)
from .simulator import ObservedSample, Segment, Trajectory, simulate, simulate_sample, true_configuration
from .stats import CostModel, death_probability, connection_cost, log_likelihood
from .estimators import EstimationReport, estimate_all
from .solver import AssignmentProblem, SolverResult, brute_force, build_problem, solve, solve_k_best
from .evaluation import Partition, adjusted_rand_index, configuration_to_partition, rand_index

__version__ = "0.1.0"
