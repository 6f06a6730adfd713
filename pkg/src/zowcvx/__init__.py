"""Derivative-free proximal stochastic methods for weakly convex composite problems."""

__version__ = "0.1.0"

from .core import (CompositeProblem, DeterministicOracle, FiniteSumOracle, RngStream,
                   StochasticOracle, deterministic_oracle, finite_sum_oracle)
from .diagnostics import (EnvelopeResult, estimate_lipschitz, estimate_weak_convexity,
                          hypomonotonicity_probe, moreau_envelope, stationarity_trace,
                          weighted_stationarity)
from .errors import (CapabilityError, ConfigError, EstimatorFailure, IllPosedError,
                     NonconvergenceError, ScheduleViolation, SolverError, SubproblemError,
                     UnsupportedDimension, ZowcvxError)
from .problems import (generate_blind_deconvolution, generate_instance, generate_phase_retrieval,
                       make_problem, read_instance, write_instance)
from .prox import box_indicator, l1_regularizer, zero_regularizer
from .smoothing import SmoothingParams, schedule_params, two_point_estimate
from .solvers import (RunRecord, SolverConfig, StepSchedule, psdfa_step, run_psdfa,
                      run_stochastic_proxpoint, run_stochastic_subgradient)

__all__ = [
    "CompositeProblem", "DeterministicOracle", "FiniteSumOracle", "RngStream", "StochasticOracle",
    "deterministic_oracle", "finite_sum_oracle", "EnvelopeResult", "estimate_lipschitz",
    "estimate_weak_convexity", "hypomonotonicity_probe", "moreau_envelope", "stationarity_trace",
    "weighted_stationarity", "CapabilityError", "ConfigError", "EstimatorFailure", "IllPosedError",
    "NonconvergenceError", "ScheduleViolation", "SolverError", "SubproblemError",
    "UnsupportedDimension", "ZowcvxError", "generate_blind_deconvolution", "generate_instance",
    "generate_phase_retrieval", "make_problem", "read_instance", "write_instance", "box_indicator",
    "l1_regularizer", "zero_regularizer", "SmoothingParams", "schedule_params",
    "two_point_estimate", "RunRecord", "SolverConfig", "StepSchedule", "psdfa_step", "run_psdfa",
    "run_stochastic_proxpoint", "run_stochastic_subgradient",
]
