"""Differentially private over-the-air FedAvg: device scheduling, alignment
design, convergence bounds and a reference simulator."""

from .errors import (
    InfeasibleError,
    NoFeasibleRoundsError,
    NoFeasibleScheduleError,
    NumericalFailure,
    OracleMismatch,
    OtaError,
    PeakPowerViolation,
    ValidationError,
)
from .privacy import PrivacyBudget, alignment_cap, per_round_epsilon
from .scheduler import SchedulePlan, solve_nonconvex, solve_p1, solve_p2, solve_p2_for, solve_p3
from .system_model import DeviceProfile, SystemParams, compute_channel_vectors

__all__ = [
    "DeviceProfile",
    "InfeasibleError",
    "NoFeasibleRoundsError",
    "NoFeasibleScheduleError",
    "NumericalFailure",
    "OracleMismatch",
    "OtaError",
    "PeakPowerViolation",
    "PrivacyBudget",
    "SchedulePlan",
    "SystemParams",
    "ValidationError",
    "alignment_cap",
    "compute_channel_vectors",
    "per_round_epsilon",
    "solve_nonconvex",
    "solve_p1",
    "solve_p2",
    "solve_p2_for",
    "solve_p3",
]

__version__ = "0.1.0"
