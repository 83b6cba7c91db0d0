"""DP-OTA-FedAvg training loop on desk-scale synthetic fleets.

Each communication round: every scheduled device starts from the global model,
takes E full-batch gradient steps, uploads its accumulated gradient (clipped to
``grad_bound``) through the analog channel, and the server applies
``m <- m - tau * estimate``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence, TextIO

import numpy as np
from scipy import optimize
from scipy.special import expit

from .aggregation import aggregate_round, power_scaling_factors
from .errors import DomainError, NumericalFailure
from .privacy import clip, per_round_epsilon
from .system_model import DeviceProfile, SystemParams, as_lookup

CSV_HEADER = ("round", "loss", "gap", "grad_norm_sq", "clips", "power_watts", "epsilon")


# -- models ---------------------------------------------------------------------


class FleetModel:
    """Average of per-device empirical losses over equal-size local datasets.

    Subclasses provide ``sample_loss`` / ``batch_grad`` over a batch (X, y).
    """

    kind = "abstract"
    datasets: list[tuple[np.ndarray, np.ndarray | None]]
    smoothness: float
    strong_convexity: float
    optimum: np.ndarray | None
    optimal_value: float | None

    @property
    def n_devices(self) -> int:
        return len(self.datasets)

    @property
    def dim(self) -> int:
        return self.datasets[0][0].shape[1]

    def batch_loss(self, m, X, y) -> float:
        raise NotImplementedError

    def batch_grad(self, m, X, y) -> np.ndarray:
        raise NotImplementedError

    def local_loss(self, k: int, m) -> float:
        X, y = self.datasets[k]
        return self.batch_loss(m, X, y)

    def local_grad(self, k: int, m) -> np.ndarray:
        X, y = self.datasets[k]
        return self.batch_grad(m, X, y)

    def local_gradient_fn(self, k: int) -> Callable[[np.ndarray], np.ndarray]:
        return lambda m: self.local_grad(k, m)

    def loss(self, m) -> float:
        return math.fsum(self.local_loss(k, m) for k in range(self.n_devices)) / self.n_devices

    def grad(self, m) -> np.ndarray:
        return np.mean([self.local_grad(k, m) for k in range(self.n_devices)], axis=0)

    def initial_gap(self, m0=None) -> float:
        m0 = np.zeros(self.dim) if m0 is None else m0
        return self.loss(m0) - self.optimal_value


@dataclass
class QuadraticModel(FleetModel):
    """Per-sample loss 0.5 (m - u)^T A (m - u) with one shared positive-definite A."""

    A: np.ndarray
    datasets: list = field(repr=False)
    smoothness: float = 1.0
    strong_convexity: float = 1.0
    kind = "quadratic"

    def __post_init__(self):
        centers = np.array([X.mean(axis=0) for X, _ in self.datasets])
        self.optimum = centers.mean(axis=0)
        self.optimal_value = self.loss(self.optimum)

    def batch_loss(self, m, X, y=None) -> float:
        diff = np.asarray(m) - X
        return 0.5 * float(np.mean(np.einsum("ij,jk,ik->i", diff, self.A, diff)))

    def batch_grad(self, m, X, y=None) -> np.ndarray:
        return self.A @ (np.asarray(m) - X.mean(axis=0))

    def closed_form_gap(self, m0=None) -> float:
        m0 = np.zeros(self.dim) if m0 is None else np.asarray(m0)
        e = m0 - self.optimum
        return 0.5 * float(e @ self.A @ e)


@dataclass
class LogisticModel(FleetModel):
    """l2-regularised logistic regression, labels in {-1, +1}, no intercept."""

    datasets: list = field(repr=False)
    regularization: float = 0.1
    kind = "logistic"

    def __post_init__(self):
        self.strong_convexity = self.regularization
        # 0.25 * lambda_max(X^T X / n) bounds the data-term Hessian; taking the worst
        # device keeps local steps at tau = 1/zeta stable as well
        gram = max(float(np.linalg.eigvalsh(X.T @ X / len(X))[-1]) for X, _ in self.datasets)
        self.smoothness = 0.25 * gram + self.regularization
        self.optimum = self._solve()
        self.optimal_value = self.loss(self.optimum)

    def batch_loss(self, m, X, y) -> float:
        margins = y * (X @ m)
        return float(np.mean(np.logaddexp(0.0, -margins))) + 0.5 * self.regularization * float(m @ m)

    def batch_grad(self, m, X, y) -> np.ndarray:
        margins = y * (X @ m)
        weights = -y * expit(-margins)
        return X.T @ weights / len(X) + self.regularization * np.asarray(m)

    def _hess(self, m) -> np.ndarray:
        h = self.regularization * np.eye(self.dim)
        for X, y in self.datasets:
            s = expit(y * (X @ m))
            h += (X.T * (s * (1 - s))) @ X / len(X) / self.n_devices
        return h

    def _solve(self) -> np.ndarray:
        res = optimize.minimize(
            self.loss, np.zeros(self.dim), jac=self.grad, hess=self._hess,
            method="trust-exact", options={"gtol": 1e-13},
        )
        return res.x


def make_synthetic_fleet(
    kind: str,
    n_devices: int,
    dim: int,
    seed: int,
    spread: float = 1.0,
    *,
    samples_per_device: int = 20,
    eigen_range: tuple[float, float] = (0.5, 2.0),
    regularization: float = 0.1,
    h_min: float = 0.1,
    h_max: float = 1.0,
    peak_power: float | Sequence[float] = 1.0,
    channel_gains: Sequence[float] | None = None,
) -> tuple[list[DeviceProfile], FleetModel]:
    """Synthetic IID fleet with equal-size local datasets.

    Channel gains are uniform in [h_min, h_max] with the weakest device pinned
    at h_min, unless ``channel_gains`` is given.
    """
    if dim < 1 or n_devices < 1:
        raise DomainError("dim and n_devices must be >= 1")
    rng = np.random.default_rng(seed)
    if kind == "quadratic":
        lo, hi = eigen_range
        if not 0 < lo <= hi:
            raise DomainError("eigen_range must satisfy 0 < lo <= hi")
        if lo == hi:
            A = lo * np.eye(dim)
            eig = np.full(dim, lo)
        else:
            eig = np.linspace(lo, hi, dim) if dim > 1 else np.array([hi])
            basis, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
            A = (basis * eig) @ basis.T
            A = 0.5 * (A + A.T)
        datasets = []
        for _ in range(n_devices):
            center = spread * rng.standard_normal(dim)
            datasets.append((center + 0.5 * spread * rng.standard_normal((samples_per_device, dim)), None))
        model: FleetModel = QuadraticModel(A=A, datasets=datasets, smoothness=float(eig.max()), strong_convexity=float(eig.min()))
    elif kind == "logistic":
        direction = rng.standard_normal(dim)
        mu = spread * direction / np.linalg.norm(direction)
        datasets = []
        for _ in range(n_devices):
            y = np.where(np.arange(samples_per_device) % 2 == 0, 1.0, -1.0)
            X = y[:, None] * mu + rng.standard_normal((samples_per_device, dim))
            datasets.append((X, y))
        model = LogisticModel(datasets=datasets, regularization=regularization)
    else:
        raise DomainError(f"unknown model kind {kind!r}")

    if channel_gains is None:
        gains = rng.uniform(h_min, h_max, size=n_devices)
        gains[int(np.argmin(gains))] = h_min
    else:
        gains = np.asarray(channel_gains, dtype=float)
        if len(gains) != n_devices:
            raise DomainError("channel_gains length must equal n_devices")
    powers = np.broadcast_to(np.asarray(peak_power, dtype=float), (n_devices,))
    devices = [DeviceProfile(k + 1, float(gains[k]), float(powers[k]), dataset_ref=k) for k in range(n_devices)]
    return devices, model


def params_for(
    model: FleetModel,
    *,
    noise_std: float,
    epsilon: float,
    delta: float,
    sum_power: float,
    total_rounds: int,
    grad_bound: float,
    learning_rate: float | None = None,
    convex: bool = True,
) -> SystemParams:
    """SystemParams whose model constants come from ``model``."""
    return SystemParams(
        n_devices=model.n_devices,
        model_dim=model.dim,
        noise_std=noise_std,
        epsilon=epsilon,
        delta=delta,
        sum_power=sum_power,
        total_rounds=total_rounds,
        grad_bound=grad_bound,
        smoothness=model.smoothness,
        strong_convexity=model.strong_convexity if convex else 0.0,
        learning_rate=1.0 / model.smoothness if learning_rate is None else learning_rate,
        initial_gap=model.initial_gap(),
    )


# -- training loop ----------------------------------------------------------------


@dataclass(frozen=True)
class RoundMetrics:
    round_index: int
    global_loss: float
    optimality_gap: float | None
    grad_norm_sq: float
    clip_activations: int
    power_spent: float
    epsilon_this_round: float

    def csv_row(self) -> list[str]:
        gap = "" if self.optimality_gap is None else _fmt(self.optimality_gap)
        return [
            str(self.round_index), _fmt(self.global_loss), gap, _fmt(self.grad_norm_sq),
            str(self.clip_activations), _fmt(self.power_spent), _fmt(self.epsilon_this_round),
        ]


def _fmt(x: float) -> str:
    return format(x, ".12g")


def local_train(
    global_model: np.ndarray,
    local_grad: Callable[[np.ndarray], np.ndarray],
    learning_rate: float,
    local_steps: int,
    grad_bound: float,
) -> tuple[np.ndarray, bool]:
    """Run E local steps; return the clipped accumulated gradient and whether it was clipped.

    The accumulated gradient equals (w^0 - w^E) / tau.
    """
    if local_steps < 1:
        raise DomainError("local_steps must be >= 1")
    w = np.array(global_model, dtype=float)
    acc = np.zeros_like(w)
    for _ in range(local_steps):
        g = local_grad(w)
        acc += g
        w = w - learning_rate * g
    if not np.all(np.isfinite(acc)):
        raise NumericalFailure("non-finite local gradient")
    return clip(acc, grad_bound)


def run_simulation(
    plan,
    model: FleetModel,
    params: SystemParams,
    devices: Sequence[DeviceProfile],
    seed: int,
    initial_model: np.ndarray | None = None,
) -> list[RoundMetrics]:
    """Execute ``plan.rounds`` communication rounds.

    Returns I + 1 records: entry i describes the global model after i rounds, with
    the clip count, power and per-round epsilon of the round that produced it
    (zeros for the initial entry). Deterministic in ``seed``.
    """
    lookup = as_lookup(devices)
    rng = np.random.default_rng(seed)
    scalings = power_scaling_factors(plan.schedule, plan.nu, params.grad_bound, lookup)
    eps = per_round_epsilon(params.grad_bound, plan.nu, params.noise_std, params.delta)
    refs = {k: (lookup[k].dataset_ref if lookup[k].dataset_ref is not None else i)
            for i, k in enumerate(sorted(lookup))}
    m = np.zeros(model.dim) if initial_model is None else np.array(initial_model, dtype=float)
    tau = params.learning_rate

    def snapshot(i, clips, power, eps_i):
        loss = model.loss(m)
        g = model.grad(m)
        if not (math.isfinite(loss) and np.all(np.isfinite(g))):
            raise NumericalFailure(f"non-finite model state after round {i}")
        gap = None if model.optimal_value is None else loss - model.optimal_value
        return RoundMetrics(i, loss, gap, float(g @ g), clips, power, eps_i)

    metrics = [snapshot(0, 0, 0.0, 0.0)]
    for i in range(1, plan.rounds + 1):
        grads, clips = {}, 0
        for k in plan.schedule:
            try:
                g, clipped = local_train(m, model.local_gradient_fn(refs[k]), tau, plan.local_steps, params.grad_bound)
            except NumericalFailure as exc:
                raise NumericalFailure(f"round {i}, device {k}: {exc}") from exc
            grads[k] = g
            clips += clipped
        record = aggregate_round(grads, scalings, plan.nu, params.grad_bound, params.noise_std, lookup, rng)
        m = m - tau * record.estimate
        metrics.append(snapshot(i, clips, sum(record.power_spent.values()), eps))
    return metrics


def format_metrics_csv(metrics: Sequence[RoundMetrics], stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in metrics:
        writer.writerow(row.csv_row())


def write_metrics_csv(path: str | Path, metrics: Sequence[RoundMetrics]) -> None:
    with open(path, "w", newline="") as fh:
        format_metrics_csv(metrics, fh)


def read_metrics_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
