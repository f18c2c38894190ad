"""Grant-free short-packet access: delay model, optimizer, and simulator."""

__version__ = "0.1.0"

from .blocklength import BlocklengthMatrix
from .config import (
    ConfigError,
    ExperimentSettings,
    OptimizerSettings,
    SimulatorSettings,
    SystemConfig,
    load_config,
    reference_config,
)
from .fbl import (
    ChannelParams,
    FbErrorParams,
    achievable_rate,
    collision_avoidance_prob,
    error_linearization,
    inverse_q,
    packet_error_prob,
    success_prob,
    transmit_power,
)
from .optimizer import OptimizeResult, alternating_optimize, penalized_objective
from .queueing import (
    DelayBreakdown,
    SteadyState,
    TrafficParams,
    average_access_delay,
    steady_state,
)
from .simulator import SimConfig, SimStats, empirical_vs_analytic_report, simulate

__all__ = [
    "BlocklengthMatrix",
    "ChannelParams",
    "ConfigError",
    "DelayBreakdown",
    "ExperimentSettings",
    "FbErrorParams",
    "OptimizeResult",
    "OptimizerSettings",
    "SimConfig",
    "SimStats",
    "SimulatorSettings",
    "SteadyState",
    "SystemConfig",
    "TrafficParams",
    "achievable_rate",
    "alternating_optimize",
    "average_access_delay",
    "collision_avoidance_prob",
    "empirical_vs_analytic_report",
    "error_linearization",
    "inverse_q",
    "load_config",
    "packet_error_prob",
    "penalized_objective",
    "reference_config",
    "simulate",
    "steady_state",
    "success_prob",
    "transmit_power",
]
