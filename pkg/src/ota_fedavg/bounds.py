"""Closed-form learning bounds for DP-OTA-FedAvg.

All expectations are over channel noise only. Penalty terms shared by the bounds:

    partial participation  4 (1 - |K|/N)^2
    local drift            (E - 1)^2
    channel noise          d sigma^2 / (2 |K|^2 theta^2)
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any

from .errors import DomainError, ModeError
from .system_model import SystemParams

DESCENT = "descent"
CONVEX_GAP = "convex-gap"
NOISELESS_GAP = "noiseless-gap"
NONCONVEX_AVG_GRAD = "nonconvex-avg-grad"


@dataclass(frozen=True)
class BoundReport:
    bound_kind: str
    value: float
    inputs_echo: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _noise_term(params: SystemParams, schedule_size: int, theta: float) -> float:
    if params.noise_std == 0:
        return 0.0
    return params.model_dim * params.noise_std**2 / (2.0 * (schedule_size * theta) ** 2)


def design_bracket(params: SystemParams, schedule_size: int, theta: float, local_steps: float) -> float:
    """4(1 - |K|/N)^2 + (E - 1)^2 + d sigma^2 / (2 |K|^2 theta^2)."""
    if schedule_size < 1:
        raise DomainError("schedule_size must be >= 1")
    if not theta > 0:
        raise DomainError("theta must be positive")
    participation = 4.0 * (1.0 - schedule_size / params.n_devices) ** 2
    drift = (local_steps - 1.0) ** 2
    return participation + drift + _noise_term(params, schedule_size, theta)


def descent_bound(
    grad_norm_sq: float,
    params: SystemParams,
    schedule_size: int,
    nu: float,
    local_steps: int,
) -> float:
    """Upper bound on E[L(m^{i+1})] - E[L(m^i)] for one communication round."""
    tau, gb = params.learning_rate, params.grad_bound
    value = (
        -0.5 * tau * grad_norm_sq
        + tau * gb**2 * (local_steps - 1) ** 2
        + 4.0 * tau * gb**2 * (1.0 - schedule_size / params.n_devices) ** 2
    )
    if params.noise_std > 0:
        value += 0.5 * params.smoothness * tau**2 * params.model_dim * params.noise_std**2 / (schedule_size * nu) ** 2
    return value


def optimality_gap_bound(
    rounds: int,
    schedule_size: int,
    theta: float,
    local_steps: float,
    params: SystemParams,
) -> float:
    if not params.convex:
        raise ModeError("optimality-gap bound needs strong_convexity > 0; use avg_sq_gradient_bound")
    contraction = params.convergence_coeff**rounds
    bracket = design_bracket(params, schedule_size, theta, local_steps)
    return contraction * params.initial_gap + params.grad_bound**2 / params.strong_convexity * (1.0 - contraction) * bracket


def noiseless_gap_bound(total_rounds: int, initial_gap: float, strong_convexity: float, smoothness: float) -> float:
    if not 0 <= strong_convexity <= smoothness:
        raise DomainError("need 0 <= strong_convexity <= smoothness")
    return (1.0 - strong_convexity / smoothness) ** total_rounds * initial_gap


def avg_sq_gradient_bound(
    rounds: int,
    schedule_size: int,
    theta: float,
    local_steps: float,
    params: SystemParams,
) -> float:
    """Bound on (1/I) sum_i E||grad L(m^i)||^2; valid without convexity."""
    if rounds < 1:
        raise DomainError("rounds must be >= 1")
    first = 2.0 * params.initial_gap / (params.learning_rate * rounds)
    return first + params.grad_bound**2 * 2.0 * design_bracket(params, schedule_size, theta, local_steps)


def report(kind: str, value: float, **inputs) -> BoundReport:
    if not math.isfinite(value):
        raise DomainError(f"{kind} bound is not finite")
    return BoundReport(bound_kind=kind, value=value, inputs_echo=inputs)
