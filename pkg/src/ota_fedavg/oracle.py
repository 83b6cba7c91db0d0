"""Independent checkers for the scheduler and the uplink simulator.

Nothing here calls into the scheduler's candidate logic: the subset search, the
alignment bound and the objective are re-derived from their definitions.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .system_model import DeviceProfile, SystemParams

MAX_BRUTE_FORCE_DEVICES = 20
_RTOL = 1e-12


def _psi(size: int, theta: float, n: int, d: int, sigma: float) -> float:
    noise = 0.0 if sigma == 0 else d * sigma * sigma / (2.0 * (size * theta) ** 2)
    return 4.0 * ((n - size) / n) ** 2 + noise


def _subset_theta(members, cap, sum_power, rounds) -> float:
    peak = min(dev.channel_gain * math.sqrt(dev.peak_power) for dev in members)
    inv = math.fsum(1.0 / (dev.channel_gain * dev.channel_gain) for dev in members)
    return min(cap, peak, math.sqrt(sum_power / (rounds * inv)))


def brute_force_p2(devices, cap: float, sum_power: float, rounds: int, params: SystemParams):
    """Exhaustive search over all nonempty subsets.

    Returns (best subset as a sorted id tuple, its theta, its psi). Ties go to
    the lexicographically smallest id tuple.
    """
    devices = sorted(devices, key=lambda dev: dev.id)
    n = len(devices)
    if n > MAX_BRUTE_FORCE_DEVICES:
        raise DomainError(f"brute force refused: {n} devices exceeds the limit of {MAX_BRUTE_FORCE_DEVICES}")
    if n == 0:
        raise DomainError("brute force on an empty fleet")
    best = None
    for size in range(1, n + 1):
        for members in itertools.combinations(devices, size):
            theta = _subset_theta(members, cap, sum_power, rounds)
            value = _psi(size, theta, params.n_devices, params.model_dim, params.noise_std)
            key = tuple(dev.id for dev in members)
            if best is None or value < best[2] or (value == best[2] and key < best[0]):
                best = (key, theta, value)
    return best


@dataclass
class AuditReport:
    checks: list[dict] = field(default_factory=list)

    def add(self, name: str, passed: bool, detail: str = "") -> None:
        self.checks.append({"check": name, "passed": bool(passed), "detail": detail})

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def failed(self) -> list[str]:
        return [c["check"] for c in self.checks if not c["passed"]]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": self.checks}


def verify_plan(plan, devices, params: SystemParams) -> AuditReport:
    """Re-check every plan invariant with its own arithmetic."""
    report = AuditReport()
    lookup = {dev.id: dev for dev in devices}
    sched = list(plan.schedule)

    report.add("schedule-nonempty", len(sched) > 0, f"|K|={len(sched)}")
    unknown = [k for k in sched if k not in lookup]
    report.add("schedule-known-devices", not unknown, f"unknown ids {unknown}" if unknown else "")
    if unknown or not sched:
        return report

    report.add(
        "nu-theta-consistent",
        math.isclose(plan.nu * params.grad_bound, plan.theta, rel_tol=1e-12),
        f"nu*grad_bound={plan.nu * params.grad_bound!r} theta={plan.theta!r}",
    )

    worst = None
    for k in sched:
        dev = lookup[k]
        phi_k = plan.nu**2 * params.grad_bound**2 / (dev.channel_gain**2 * dev.peak_power)
        stored = plan.power_scaling.get(k)
        if stored is None or not math.isclose(stored, phi_k, rel_tol=1e-9) or not 0 < phi_k <= 1 + _RTOL:
            worst = (k, phi_k, stored)
            break
    report.add(
        "power-scaling-range",
        worst is None,
        "" if worst is None else f"device {worst[0]}: phi={worst[1]!r} stored={worst[2]!r}",
    )

    nu_max = min(lookup[k].channel_gain * math.sqrt(lookup[k].peak_power) for k in sched) / params.grad_bound
    report.add("peak-power", plan.nu <= nu_max * (1 + _RTOL), f"nu={plan.nu!r} bound={nu_max!r}")

    per_round = math.fsum(plan.theta**2 / lookup[k].channel_gain ** 2 for k in sched)
    total = plan.rounds * per_round
    report.add("sum-power", total <= params.sum_power, f"I*sum={total!r} P_tot={params.sum_power!r}")

    report.add(
        "rounds-range",
        1 <= plan.rounds <= params.total_rounds,
        f"I={plan.rounds} T={params.total_rounds}",
    )
    report.add(
        "local-steps",
        plan.local_steps >= 1 and plan.local_steps * plan.rounds <= params.total_rounds
        and plan.local_steps == params.total_rounds // plan.rounds,
        f"E={plan.local_steps} I={plan.rounds} T={params.total_rounds}",
    )

    if params.noise_std > 0:
        phi = math.sqrt(2.0 * math.log(1.25 / params.delta))
        eps = 2.0 * plan.theta * phi / params.noise_std
        report.add("privacy", eps <= params.epsilon * (1 + _RTOL), f"eps={eps!r} budget={params.epsilon!r}")
    else:
        report.add("privacy", False, "noiseless channel gives no privacy")
    return report


def mc_noise_stats(nu: float, schedule_size: int, noise_std: float, samples: int, seed: int, dim: int = 1):
    """Monte-Carlo mean and per-coordinate variance of r / (|K| nu)."""
    if samples < 10_000:
        raise DomainError("mc_noise_stats needs at least 1e4 samples")
    rng = np.random.default_rng(seed)
    draws = rng.normal(0.0, noise_std, size=(samples, dim)) / (schedule_size * nu) if noise_std > 0 else np.zeros((samples, dim))
    return float(draws.mean()), float(draws.var(axis=0, ddof=1).mean())


def random_instance(rng: np.random.Generator, n_min: int = 2, n_max: int = 12, heterogeneous: bool | None = None):
    """Random fleet and parameters for oracle-equivalence runs.

    Gains are log-uniform in [0.05, 2]; heterogeneous fleets draw peak powers
    uniformly from [0.5, 2] W. The privacy cap is drawn around the c/q scale so
    that every solver branch is exercised.
    """
    n = int(rng.integers(n_min, n_max + 1))
    if heterogeneous is None:
        heterogeneous = bool(rng.integers(0, 2))
    gains = np.exp(rng.uniform(math.log(0.05), math.log(2.0), size=n))
    powers = rng.uniform(0.5, 2.0, size=n) if heterogeneous else np.full(n, float(rng.uniform(0.5, 2.0)))
    devices = [DeviceProfile(i + 1, float(g), float(p)) for i, (g, p) in enumerate(zip(gains, powers))]
    rounds = int(rng.integers(1, 50))
    sum_power = float(rng.uniform(0.5, 20.0)) * rounds
    cap = float(np.exp(rng.uniform(math.log(0.01), math.log(5.0))))
    params = SystemParams(
        n_devices=n,
        model_dim=int(rng.integers(1, 200)),
        noise_std=float(rng.uniform(0.05, 2.0)),
        epsilon=1.0,
        delta=0.01,
        sum_power=sum_power,
        total_rounds=max(rounds, 50),
        grad_bound=1.0,
        smoothness=1.0,
        strong_convexity=0.5,
        learning_rate=1.0,
        initial_gap=1.0,
    )
    return devices, params, cap, rounds
