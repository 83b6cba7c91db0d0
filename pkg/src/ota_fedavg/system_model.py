"""Devices, scalar system constants and the channel vectors bounding the alignment factor.

Devices are kept in canonical order: ascending channel gain, ties broken by id.
The two vectors that drive scheduling are

    c_m = |h_m| sqrt(P_m)                              (peak-power bound)
    q_m = sqrt(P_tot / I) / sqrt(sum_{j >= m} 1/|h_j|^2)  (sum-power bound)

``q`` depends on the number of aggregation rounds ``I`` and is stamped with it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import DomainError, EmptyFleetError, ValidationError

EQUAL_POWER = "equal-power"
HETEROGENEOUS = "heterogeneous"
MODES = (EQUAL_POWER, HETEROGENEOUS)


@dataclass(frozen=True)
class DeviceProfile:
    id: int
    channel_gain: float
    peak_power: float = 1.0
    dataset_ref: Any = field(default=None, compare=False)

    def __post_init__(self):
        if not (self.channel_gain > 0 and math.isfinite(self.channel_gain)):
            raise DomainError(f"device {self.id}: channel_gain must be positive, got {self.channel_gain!r}")
        if not (self.peak_power > 0 and math.isfinite(self.peak_power)):
            raise DomainError(f"device {self.id}: peak_power must be positive, got {self.peak_power!r}")

    @property
    def c_value(self) -> float:
        return self.channel_gain * math.sqrt(self.peak_power)


@dataclass(frozen=True)
class SystemParams:
    """Every scalar constant of the problem.

    ``strong_convexity == 0`` selects non-convex mode, where the optimality-gap
    objective and the round search are unavailable.
    """

    n_devices: int
    model_dim: int
    noise_std: float
    epsilon: float
    delta: float
    sum_power: float
    total_rounds: int
    grad_bound: float
    smoothness: float
    strong_convexity: float
    learning_rate: float
    initial_gap: float

    def __post_init__(self):
        if self.n_devices < 1:
            raise DomainError("n_devices must be >= 1")
        if self.model_dim < 1:
            raise DomainError("model_dim must be >= 1")
        if self.noise_std < 0:
            raise DomainError("noise_std must be nonnegative")
        if not self.epsilon > 0:
            raise DomainError("epsilon must be positive")
        if not 0 < self.delta < 1:
            raise DomainError("delta must lie in (0, 1)")
        if not self.sum_power > 0:
            raise DomainError("sum_power must be positive")
        if self.total_rounds < 1:
            raise DomainError("total_rounds must be >= 1")
        if not self.grad_bound > 0:
            raise DomainError("grad_bound must be positive")
        if not self.smoothness > 0:
            raise DomainError("smoothness must be positive")
        if not 0 <= self.strong_convexity <= self.smoothness:
            raise DomainError("strong_convexity must lie in [0, smoothness]")
        if not self.learning_rate > 0:
            raise DomainError("learning_rate must be positive")
        # tau <= 1/zeta, allowing for 1/zeta having been rounded on the way in
        if self.learning_rate * self.smoothness > 1 + 1e-12:
            raise DomainError("learning_rate must not exceed 1/smoothness")
        if self.initial_gap < 0:
            raise DomainError("initial_gap must be nonnegative")

    @property
    def convex(self) -> bool:
        return self.strong_convexity > 0

    @property
    def convergence_coeff(self) -> float:
        """1 - strong_convexity / smoothness."""
        return 1.0 - self.strong_convexity / self.smoothness

    def replace(self, **changes) -> "SystemParams":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass(frozen=True)
class ChannelVectors:
    """The c/q pair for one fleet at one round count.

    ``order`` holds the device ids in the order of ``c`` (which, in heterogeneous
    mode, is the rank order of the sorted c values and may differ from the
    channel-gain order used by ``q``).
    """

    c: np.ndarray
    q: np.ndarray
    round_count_used: int
    mode: str
    order: tuple[int, ...]
    gain_order: tuple[int, ...]


def sort_devices(devices: Iterable[DeviceProfile]) -> list[DeviceProfile]:
    devices = list(devices)
    if not devices:
        raise EmptyFleetError("device fleet is empty")
    ids = [d.id for d in devices]
    if len(set(ids)) != len(ids):
        raise ValidationError("device ids must be unique")
    return sorted(devices, key=lambda d: (d.channel_gain, d.id))


def infer_mode(devices: Sequence[DeviceProfile]) -> str:
    powers = {d.peak_power for d in devices}
    return EQUAL_POWER if len(powers) == 1 else HETEROGENEOUS


def _suffix_inverse_square_sums(gains: np.ndarray) -> np.ndarray:
    inv = 1.0 / gains**2
    return np.cumsum(inv[::-1])[::-1]


def compute_channel_vectors(
    devices: Sequence[DeviceProfile],
    sum_power: float,
    rounds: int,
    mode: str | None = None,
) -> ChannelVectors:
    """Build c and q for a fleet already in canonical order."""
    if rounds < 1:
        raise DomainError(f"rounds must be >= 1, got {rounds}")
    if not devices:
        raise EmptyFleetError("device fleet is empty")
    mode = mode or infer_mode(devices)
    if mode not in MODES:
        raise DomainError(f"unknown mode {mode!r}")
    gains = np.array([d.channel_gain for d in devices], dtype=float)
    if np.any(np.diff(gains) < 0):
        raise DomainError("devices must be sorted by ascending channel gain")
    if mode == EQUAL_POWER and infer_mode(devices) != EQUAL_POWER:
        raise DomainError("equal-power mode requested for a fleet with distinct peak powers")

    q = np.sqrt(sum_power / rounds) / np.sqrt(_suffix_inverse_square_sums(gains))
    c = np.array([d.c_value for d in devices], dtype=float)
    gain_order = tuple(d.id for d in devices)
    if mode == HETEROGENEOUS:
        perm = sorted(range(len(devices)), key=lambda i: (c[i], devices[i].id))
        c = c[perm]
        order = tuple(devices[i].id for i in perm)
    else:
        order = gain_order
    return ChannelVectors(c=c, q=q, round_count_used=rounds, mode=mode, order=order, gain_order=gain_order)


def subset_c(subset: Iterable[int], devices: Mapping[int, DeviceProfile]) -> float:
    return min(devices[k].c_value for k in subset)


def subset_q(subset: Iterable[int], devices: Mapping[int, DeviceProfile], sum_power: float, rounds: int) -> float:
    total = math.fsum(1.0 / devices[k].channel_gain ** 2 for k in subset)
    return math.sqrt(sum_power / rounds) / math.sqrt(total)


def theta_max(
    subset: Iterable[int],
    cap: float,
    devices: Mapping[int, DeviceProfile] | Sequence[DeviceProfile],
    sum_power: float,
    rounds: int,
) -> float:
    """Largest feasible alignment factor for an arbitrary subset.

    Evaluated directly from the subset members, so it holds for any subset and
    not only the top-k sets the closed-form candidates use.
    """
    subset = list(subset)
    if not subset:
        raise DomainError("theta_max of an empty subset")
    if rounds < 1:
        raise DomainError(f"rounds must be >= 1, got {rounds}")
    lookup = as_lookup(devices)
    return min(cap, subset_c(subset, lookup), subset_q(subset, lookup, sum_power, rounds))


def as_lookup(devices: Mapping[int, DeviceProfile] | Sequence[DeviceProfile]) -> dict[int, DeviceProfile]:
    if isinstance(devices, Mapping):
        return dict(devices)
    return {d.id: d for d in devices}


# -- fleet files ---------------------------------------------------------------


def parse_fleet(records: Any, source: str = "fleet") -> list[DeviceProfile]:
    if not isinstance(records, list):
        raise ValidationError(f"{source}: expected a JSON array of device records")
    devices = []
    for i, rec in enumerate(records):
        where = f"{source}[{i}]"
        if not isinstance(rec, dict):
            raise ValidationError(f"{where}: expected an object")
        missing = {"id", "channel_gain"} - rec.keys()
        if missing:
            raise ValidationError(f"{where}: missing field(s) {sorted(missing)}")
        try:
            dev_id = rec["id"]
            if isinstance(dev_id, bool) or not isinstance(dev_id, int):
                raise ValidationError(f"{where}.id: expected an integer")
            devices.append(
                DeviceProfile(
                    id=dev_id,
                    channel_gain=float(rec["channel_gain"]),
                    peak_power=float(rec.get("peak_power", 1.0)),
                    dataset_ref=rec.get("dataset_ref"),
                )
            )
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"{where}: {exc}") from exc
    if not devices:
        raise EmptyFleetError(f"{source}: device fleet is empty")
    ids = [d.id for d in devices]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"{source}: duplicate device ids")
    return devices


def load_fleet(path: str | Path) -> list[DeviceProfile]:
    path = Path(path)
    try:
        records = json.loads(path.read_text())
    except OSError as exc:
        raise ValidationError(f"{path}: cannot read fleet file ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    return parse_fleet(records, source=str(path))


def fleet_to_records(devices: Iterable[DeviceProfile]) -> list[dict]:
    return [{"id": d.id, "channel_gain": d.channel_gain, "peak_power": d.peak_power} for d in devices]
