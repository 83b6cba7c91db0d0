"""Per-round Gaussian-mechanism accounting for aligned over-the-air aggregation.

The receiver sees ``nu * sum_k g_k + r`` with ``r ~ N(0, sigma^2 I)``. Swapping one
sample on device m moves the received signal by at most ``2 * grad_bound * nu``
(both gradients are clipped to ``grad_bound``), so each round is (eps, delta)-DP with

    eps = 2 * grad_bound * nu / sigma * sqrt(2 ln(1.25 / delta)).

Only the per-round guarantee is reported. The value is an upper bound on the
leakage; nothing here composes it across rounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError


def phi(delta: float) -> float:
    """sqrt(2 ln(1.25 / delta))."""
    if not 0 < delta < 1:
        raise DomainError(f"delta must lie in (0, 1), got {delta!r}")
    return math.sqrt(2.0 * math.log(1.25 / delta))


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float
    phi: float = field(init=False)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise DomainError(f"epsilon must be positive, got {self.epsilon!r}")
        object.__setattr__(self, "phi", phi(self.delta))


def per_round_epsilon(grad_bound: float, alignment_coeff: float, noise_std: float, delta: float) -> float:
    if grad_bound <= 0 or alignment_coeff < 0:
        raise DomainError("grad_bound must be positive and alignment_coeff nonnegative")
    if noise_std < 0:
        raise DomainError("noise_std must be nonnegative")
    if noise_std == 0:
        return math.inf
    return 2.0 * grad_bound * alignment_coeff / noise_std * phi(delta)


def alignment_cap(budget: PrivacyBudget, noise_std: float) -> float:
    """Largest alignment factor theta = nu * grad_bound meeting the per-round budget."""
    if noise_std < 0:
        raise DomainError("noise_std must be nonnegative")
    return budget.epsilon * noise_std / (2.0 * budget.phi)


def clip(vector: np.ndarray, bound: float) -> tuple[np.ndarray, bool]:
    """Scale ``vector`` onto the ball of radius ``bound``; report whether it was scaled."""
    norm = float(np.linalg.norm(vector))
    if norm > bound:
        return vector * (bound / norm), True
    return vector, False


def empirical_sensitivity(
    model_grad: Callable[[Sequence], np.ndarray],
    dataset: Sequence,
    swap_index: int,
    replacement,
    alignment_coeff: float,
    grad_bound: float,
) -> float:
    """nu * ||clip(g(D)) - clip(g(D'))|| for the adjacent pair obtained by one swap.

    ``model_grad`` maps a list of samples to the transmitted gradient. Both sides
    are clipped to ``grad_bound`` first, as the simulator does before upload.
    """
    if not 0 <= swap_index < len(dataset):
        raise IndexError(f"swap_index {swap_index} out of range for dataset of size {len(dataset)}")
    neighbour = list(dataset)
    neighbour[swap_index] = replacement
    g, _ = clip(np.asarray(model_grad(list(dataset)), dtype=float), grad_bound)
    g_adj, _ = clip(np.asarray(model_grad(neighbour), dtype=float), grad_bound)
    return alignment_coeff * float(np.linalg.norm(g - g_adj))
