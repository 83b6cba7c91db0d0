"""Analog over-the-air uplink: power scaling, superposition, post-processing, error split.

Signals are real d-vectors; phase is assumed perfectly pre-corrected, so a device
with gain |h_k| and power scaling phi_k reaches the receiver with amplitude
``|h_k| sqrt(phi_k P_k) / grad_bound``. Alignment picks phi_k so that every
amplitude equals the common coefficient nu.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import DomainError, PeakPowerViolation
from .system_model import DeviceProfile, as_lookup

# phi_k = 1 + O(ulp) is accepted and clamped to 1; anything larger is a violation.
_PEAK_SLACK = 1e-12


@dataclass
class AggregationRoundRecord:
    raw_gradients: dict[int, np.ndarray]
    received: np.ndarray
    estimate: np.ndarray
    fading_error: np.ndarray
    noise_error: np.ndarray
    power_spent: dict[int, float]

    @property
    def true_average(self) -> np.ndarray:
        return np.mean(np.stack(list(self.raw_gradients.values())), axis=0)


def power_scaling_factors(
    schedule: Iterable[int],
    nu: float,
    grad_bound: float,
    devices,
) -> dict[int, float]:
    """phi_k = nu^2 grad_bound^2 / (|h_k|^2 P_k) for each scheduled device."""
    lookup = as_lookup(devices)
    factors = {}
    for k in sorted(schedule):
        dev = lookup[k]
        value = (nu * grad_bound) ** 2 / (dev.channel_gain**2 * dev.peak_power)
        if value > 1 + _PEAK_SLACK:
            raise PeakPowerViolation(k, value)
        factors[k] = min(value, 1.0)
    return factors


def amplitudes(power_scalings: Mapping[int, float], grad_bound: float, devices) -> dict[int, float]:
    lookup = as_lookup(devices)
    return {
        k: lookup[k].channel_gain * math.sqrt(phi_k * lookup[k].peak_power) / grad_bound
        for k, phi_k in power_scalings.items()
    }


def _stack(gradients: Mapping[int, np.ndarray]) -> tuple[list[int], np.ndarray]:
    ids = sorted(gradients)
    if not ids:
        raise DomainError("no gradients to aggregate")
    arrays = [np.asarray(gradients[k], dtype=float) for k in ids]
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1 or len(arrays[0].shape) != 1:
        raise DomainError(f"gradient dimension mismatch: {sorted(shapes)}")
    return ids, np.stack(arrays)


def superpose(
    gradients: Mapping[int, np.ndarray],
    amps: Mapping[int, float],
    noise_std: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Received signal sum_k a_k g_k + r for arbitrary per-device amplitudes."""
    ids, stacked = _stack(gradients)
    weights = np.array([amps[k] for k in ids])
    noise = noise_std * rng.standard_normal(stacked.shape[1]) if noise_std > 0 else np.zeros(stacked.shape[1])
    return weights @ stacked + noise, noise


def ota_aggregate(
    gradients: Mapping[int, np.ndarray],
    nu: float,
    noise_std: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Aligned superposition ``nu * sum_k g_k + r``; returns (received, noise drawn)."""
    if noise_std < 0:
        raise DomainError("noise_std must be nonnegative")
    ids, stacked = _stack(gradients)
    noise = noise_std * rng.standard_normal(stacked.shape[1]) if noise_std > 0 else np.zeros(stacked.shape[1])
    return nu * stacked.sum(axis=0) + noise, noise


def postprocess(received: np.ndarray, schedule_size: int, nu: float) -> np.ndarray:
    if schedule_size < 1 or not nu > 0:
        raise DomainError("postprocess needs schedule_size >= 1 and nu > 0")
    return np.asarray(received) / (schedule_size * nu)


def error_decomposition(
    gradients: Mapping[int, np.ndarray],
    power_scalings: Mapping[int, float],
    nu: float,
    noise_drawn: np.ndarray,
    schedule_size: int,
    devices,
    grad_bound: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Split estimate minus true mean into its fading and noise parts."""
    ids, stacked = _stack(gradients)
    amps = amplitudes(power_scalings, grad_bound, devices)
    coeffs = np.array([amps[k] / nu - 1.0 for k in ids])
    fading = coeffs @ stacked / schedule_size
    noise = np.asarray(noise_drawn) / (schedule_size * nu)
    return fading, noise


def round_power(schedule: Iterable[int], theta: float, devices) -> float:
    """Transmit power of one round: sum_k theta^2 / |h_k|^2 (theta = nu * grad_bound)."""
    schedule = list(schedule)
    if not schedule:
        raise DomainError("round_power of an empty schedule")
    lookup = as_lookup(devices)
    return sum(theta**2 / lookup[k].channel_gain ** 2 for k in sorted(schedule))


def aggregate_round(
    gradients: Mapping[int, np.ndarray],
    power_scalings: Mapping[int, float],
    nu: float,
    grad_bound: float,
    noise_std: float,
    devices: Mapping[int, DeviceProfile],
    rng: np.random.Generator,
) -> AggregationRoundRecord:
    """One uplink round through the general (not presumed aligned) channel model."""
    amps = amplitudes(power_scalings, grad_bound, devices)
    received, noise = superpose(gradients, amps, noise_std, rng)
    size = len(gradients)
    estimate = postprocess(received, size, nu)
    fading, noise_err = error_decomposition(gradients, power_scalings, nu, noise, size, devices, grad_bound)
    lookup = as_lookup(devices)
    spent = {k: phi_k * lookup[k].peak_power for k, phi_k in power_scalings.items()}
    return AggregationRoundRecord(
        raw_gradients={k: np.asarray(g, dtype=float) for k, g in gradients.items()},
        received=received,
        estimate=estimate,
        fading_error=fading,
        noise_error=noise_err,
        power_spent=spent,
    )
