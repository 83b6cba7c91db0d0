"""Joint design of the scheduled set, alignment factor and number of aggregation rounds.

The full problem is split in two:

* with the round count I fixed, pick (K, theta) minimising
  ``psi = 4 (1 - |K|/N)^2 + d sigma^2 / (2 |K|^2 theta^2)`` subject to
  ``theta <= min(privacy cap, min_K |h_k| sqrt(P_k), q_K(I))``. Only a handful of
  closed-form candidate pairs can be optimal, so the search is a short scan.
* with (K, theta) fixed, scan the feasible integer range of I for the smallest
  optimality-gap bound W.

``solve_p1`` alternates the two until W stops moving.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from . import bounds
from .aggregation import round_power
from .errors import DomainError, ModeError, NoFeasibleRoundsError, NoFeasibleScheduleError
from .privacy import PrivacyBudget, alignment_cap, per_round_epsilon
from .system_model import (
    EQUAL_POWER,
    HETEROGENEOUS,
    ChannelVectors,
    DeviceProfile,
    SystemParams,
    as_lookup,
    compute_channel_vectors,
    infer_mode,
    sort_devices,
    theta_max,
)

log = logging.getLogger(__name__)

CLOSED_FORM = "closed-form"
REFINEMENT = "refinement"

# relative slack when re-checking a closed-form theta against theta_max of its set;
# the two are computed by different summation orders
_FEAS_RTOL = 1e-12


@dataclass(frozen=True)
class CandidatePair:
    rank_j: int
    theta: float
    schedule: tuple[int, ...]
    psi_value: float
    source: str = CLOSED_FORM
    feasible: bool = True
    note: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schedule"] = list(self.schedule)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CandidatePair":
        d = dict(d)
        d["schedule"] = tuple(d["schedule"])
        return cls(**d)


@dataclass(frozen=True)
class P2Solution:
    schedule: tuple[int, ...]
    theta: float
    candidates: tuple[CandidatePair, ...]
    rounds: int
    branch: str

    @property
    def psi_value(self) -> float:
        return min(c.psi_value for c in self.candidates if c.feasible)


@dataclass
class SchedulePlan:
    schedule: tuple[int, ...]
    theta: float
    nu: float
    rounds: int
    local_steps: int
    power_scaling: dict[int, float]
    predicted_objective: float
    mode: str = EQUAL_POWER
    convex: bool = True
    converged: bool = True
    iterations: int = 1
    candidates: list[CandidatePair] = field(default_factory=list)
    history: list[dict] = field(default_factory=list)

    @property
    def schedule_size(self) -> int:
        return len(self.schedule)

    def to_dict(self) -> dict:
        return {
            "schedule": list(self.schedule),
            "theta": self.theta,
            "nu": self.nu,
            "rounds": self.rounds,
            "local_steps": self.local_steps,
            "power_scaling": {str(k): v for k, v in sorted(self.power_scaling.items())},
            "predicted_objective": self.predicted_objective,
            "mode": self.mode,
            "convex": self.convex,
            "converged": self.converged,
            "iterations": self.iterations,
            "candidates": [c.to_dict() for c in self.candidates],
            "history": list(self.history),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SchedulePlan":
        try:
            return cls(
                schedule=tuple(int(k) for k in d["schedule"]),
                theta=float(d["theta"]),
                nu=float(d["nu"]),
                rounds=int(d["rounds"]),
                local_steps=int(d["local_steps"]),
                power_scaling={int(k): float(v) for k, v in d["power_scaling"].items()},
                predicted_objective=float(d["predicted_objective"]),
                mode=d.get("mode", EQUAL_POWER),
                convex=bool(d.get("convex", True)),
                converged=bool(d.get("converged", True)),
                iterations=int(d.get("iterations", 1)),
                candidates=[CandidatePair.from_dict(c) for c in d.get("candidates", [])],
                history=list(d.get("history", [])),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DomainError(f"malformed plan: {exc}") from exc


# -- objectives -----------------------------------------------------------------


def objective_psi(schedule_size: int, theta: float, params: SystemParams) -> float:
    if schedule_size < 1:
        raise DomainError("schedule_size must be >= 1 (objective diverges on an empty schedule)")
    if not theta > 0:
        raise DomainError("theta must be positive")
    participation = 4.0 * (1.0 - schedule_size / params.n_devices) ** 2
    if params.noise_std == 0:
        return participation
    return participation + params.model_dim * params.noise_std**2 / (2.0 * schedule_size**2 * theta**2)


def objective_w(schedule_size: int, theta: float, rounds: int, params: SystemParams) -> float:
    """Optimality-gap bound with the local-step count relaxed to T / I."""
    if not params.convex:
        raise ModeError("W needs strong_convexity > 0; in non-convex mode use bounds.avg_sq_gradient_bound")
    if rounds < 1:
        raise DomainError("rounds must be >= 1")
    return bounds.optimality_gap_bound(rounds, schedule_size, theta, params.total_rounds / rounds, params)


def privacy_cap(params: SystemParams) -> float:
    return alignment_cap(PrivacyBudget(params.epsilon, params.delta), params.noise_std)


# -- P2: device set and alignment factor ----------------------------------------


def _feasible_theta(theta, schedule, lookup, cap, sum_power, rounds, params) -> bool:
    if theta > cap:
        return False
    for k in schedule:
        dev = lookup[k]
        if theta * theta / (dev.channel_gain**2 * dev.peak_power) > 1.0:
            return False
    per_round = round_power(schedule, theta, lookup)
    if rounds * per_round > sum_power:
        return False
    if rounds * math.fsum(theta**2 / lookup[k].channel_gain ** 2 for k in schedule) > sum_power:
        return False
    if params is not None and params.noise_std > 0:
        eps = per_round_epsilon(params.grad_bound, theta / params.grad_bound, params.noise_std, params.delta)
        if eps > params.epsilon:
            return False
    return True


def snap_theta(theta, schedule, devices, cap, sum_power, rounds, params=None) -> float:
    """Step theta down by a few ulps until every constraint holds in floating point.

    Closed-form values sit exactly on a constraint boundary; this keeps the
    emitted plan on the feasible side of it.
    """
    lookup = as_lookup(devices)
    for _ in range(256):
        if _feasible_theta(theta, schedule, lookup, cap, sum_power, rounds, params):
            return theta
        theta = float(np.nextafter(theta, 0.0))
    raise NoFeasibleScheduleError(f"could not make theta feasible for schedule {tuple(schedule)}")


def _closed_form_candidates(vectors: ChannelVectors, cap: float) -> tuple[str, list[tuple[float, tuple[int, ...]]]]:
    """The closed-form candidate list for the current c/q vectors.

    Returns the branch name and (theta_j, K_j) pairs in rank order; an empty
    K_j is kept so the caller can mark it infeasible.
    """
    c, q = vectors.c, vectors.q
    n = len(c)
    by_gain = vectors.gain_order
    if cap < min(c[0], q[0]):
        return "privacy-bound", [(cap, by_gain)]

    q1 = {k for k in range(n) if c[0] <= c[k] < cap}
    q2 = {k for k in range(n) if q[0] <= q[k] < cap}
    n_q = len(q1 | q2)
    pairs = []
    if vectors.mode == EQUAL_POWER:
        for j in range(n_q):
            pairs.append((min(c[j], q[j]), by_gain[j:]))
    else:
        c_of = dict(zip(vectors.order, c))
        for j in range(n_q):
            if c[j] <= q[j]:
                members = tuple(k for k in by_gain if c_of[k] >= c[j])
            else:
                members = by_gain[j:]
            pairs.append((min(c[j], q[j]), members))
    pairs.append((cap, by_gain[n_q:]))
    return "search", pairs


def _refinement_candidates(devices: Sequence[DeviceProfile], cap: float, sum_power: float, rounds: int, params):
    """Best alignment factor for every schedule size, over arbitrary peak powers.

    For any subset S with smallest c-value t, the devices of largest gain among
    {k : c_k >= t} do at least as well as S at equal size. Scanning every
    threshold t and every size therefore reaches the optimum of each size.
    """
    n = len(devices)
    gains = np.array([d.channel_gain for d in devices])
    cvals = np.array([d.c_value for d in devices])
    best: dict[int, tuple[float, tuple[int, ...]]] = {}
    scale = math.sqrt(sum_power / rounds)
    for t in np.unique(cvals):
        pool = [i for i in range(n - 1, -1, -1) if cvals[i] >= t]  # descending gain
        inv = np.cumsum(1.0 / gains[pool] ** 2)
        cmin = np.minimum.accumulate(cvals[pool])
        thetas = np.minimum(np.minimum(cmin, scale / np.sqrt(inv)), cap)
        for s, th in enumerate(thetas, start=1):
            if s not in best or th > best[s][0]:
                best[s] = (float(th), tuple(sorted(devices[i].id for i in pool[:s])))
    out = []
    for s in sorted(best):
        th, members = best[s]
        # canonical gain order within the set
        members = tuple(d.id for d in devices if d.id in set(members))
        out.append((th, members))
    return out


def solve_p2(
    devices: Sequence[DeviceProfile],
    cap: float,
    sum_power: float,
    rounds: int,
    params: SystemParams,
    mode: str | None = None,
    refine: bool | None = None,
) -> P2Solution:
    """Optimal (K, theta) for a fixed round count.

    ``refine`` adds an exact per-size scan on top of the closed-form candidates;
    it defaults to on for heterogeneous peak powers, where the closed-form list
    alone can miss the optimum.
    """
    devices = sort_devices(devices)
    lookup = as_lookup(devices)
    mode = mode or infer_mode(devices)
    if refine is None:
        refine = mode == HETEROGENEOUS
    vectors = compute_channel_vectors(devices, sum_power, rounds, mode)
    branch, pairs = _closed_form_candidates(vectors, cap)

    candidates = []
    for j, (theta, members) in enumerate(pairs, start=1):
        if not members:
            candidates.append(CandidatePair(j, float(theta), (), math.inf, feasible=False, note="empty schedule"))
            continue
        bound = theta_max(members, cap, lookup, sum_power, rounds)
        note = ""
        if theta > bound * (1 + _FEAS_RTOL):
            note = f"closed-form theta {theta!r} exceeds theta_max of its set; lowered"
            theta = bound
        candidates.append(
            CandidatePair(j, float(theta), tuple(members), objective_psi(len(members), theta, params), note=note)
        )
    if refine:
        start = len(candidates) + 1
        for j, (theta, members) in enumerate(_refinement_candidates(devices, cap, sum_power, rounds, params), start):
            candidates.append(
                CandidatePair(j, theta, members, objective_psi(len(members), theta, params), source=REFINEMENT)
            )

    feasible = [c for c in candidates if c.feasible]
    if not feasible:
        raise NoFeasibleScheduleError("every candidate schedule is empty")
    best = min(feasible, key=lambda c: (c.psi_value, -len(c.schedule), c.rank_j))
    theta = snap_theta(best.theta, best.schedule, lookup, cap, sum_power, rounds)
    return P2Solution(best.schedule, theta, tuple(candidates), rounds, branch)


def solve_p2_for(devices, params: SystemParams, rounds: int, mode=None, refine=None) -> P2Solution:
    """solve_p2 with the cap and sum power taken from ``params``.

    The returned theta also passes the per-round privacy check in floating point.
    """
    cap = privacy_cap(params)
    sol = solve_p2(devices, cap, params.sum_power, rounds, params, mode, refine)
    theta = snap_theta(sol.theta, sol.schedule, devices, cap, params.sum_power, rounds, params)
    return replace(sol, theta=theta)


# -- P3: number of aggregation rounds -------------------------------------------


def feasible_round_range(schedule: Iterable[int], theta: float, params: SystemParams, devices) -> range:
    """Integer I with 1 <= I <= T and I * sum_k theta^2/|h_k|^2 <= P_tot."""
    per_round = round_power(schedule, theta, devices)
    if per_round <= 0:
        return range(1, params.total_rounds + 1)
    top = min(params.total_rounds, math.floor(params.sum_power / per_round))
    while top >= 1 and top * per_round > params.sum_power:
        top -= 1
    while top + 1 <= params.total_rounds and (top + 1) * per_round <= params.sum_power:
        top += 1
    return range(1, top + 1)


def solve_p3(schedule: Iterable[int], theta: float, params: SystemParams, devices) -> int:
    schedule = tuple(schedule)
    if not schedule:
        raise DomainError("solve_p3 needs a nonempty schedule")
    if not params.convex:
        raise ModeError("round search needs strong_convexity > 0")
    candidates = feasible_round_range(schedule, theta, params, devices)
    if len(candidates) == 0:
        raise NoFeasibleRoundsError(
            f"a single round needs {round_power(schedule, theta, devices)!r} W > sum power {params.sum_power!r}"
        )
    size = len(schedule)
    # min() keeps the first minimiser, i.e. the smallest I on ties
    return min(candidates, key=lambda i: objective_w(size, theta, i, params))


# -- P1: alternation --------------------------------------------------------------


def make_plan(
    schedule: Iterable[int],
    theta: float,
    rounds: int,
    devices,
    params: SystemParams,
    *,
    mode: str | None = None,
    predicted_objective: float | None = None,
    **extra,
) -> SchedulePlan:
    """Assemble a plan from a design without checking it (see ``oracle.verify_plan``)."""
    lookup = as_lookup(devices)
    schedule = tuple(d.id for d in sort_devices(lookup[k] for k in schedule))
    nu = theta / params.grad_bound
    scaling = {k: (nu * params.grad_bound) ** 2 / (lookup[k].channel_gain ** 2 * lookup[k].peak_power) for k in schedule}
    local_steps = params.total_rounds // rounds
    if predicted_objective is None:
        if params.convex:
            predicted_objective = objective_w(len(schedule), theta, rounds, params)
        else:
            predicted_objective = bounds.avg_sq_gradient_bound(rounds, len(schedule), theta, local_steps, params)
    return SchedulePlan(
        schedule=schedule,
        theta=theta,
        nu=nu,
        rounds=rounds,
        local_steps=local_steps,
        power_scaling=scaling,
        predicted_objective=predicted_objective,
        mode=mode or infer_mode(list(lookup.values())),
        convex=params.convex,
        **extra,
    )


def solve_p1(
    devices: Sequence[DeviceProfile],
    params: SystemParams,
    conv_tol: float = 1e-9,
    max_iters: int = 50,
    mode: str | None = None,
) -> SchedulePlan:
    """Alternate the (K, theta) and I sub-problems starting from I = T.

    Stops once W moves by at most ``conv_tol``; the first comparison is against W
    of the initial design at I = T. Returns the best plan seen, flagged
    ``converged=False`` if ``max_iters`` ran out.
    """
    if not params.convex:
        raise ModeError("solve_p1 needs strong_convexity > 0; use solve_nonconvex")
    devices = sort_devices(devices)
    if len(devices) != params.n_devices:
        raise DomainError(f"params.n_devices={params.n_devices} but fleet has {len(devices)} devices")
    mode = mode or infer_mode(devices)

    rounds = params.total_rounds
    previous = None
    best = None
    history = []
    converged = False
    for it in range(1, max_iters + 1):
        p2 = solve_p2_for(devices, params, rounds, mode)
        if previous is None:
            previous = objective_w(len(p2.schedule), p2.theta, rounds, params)
        new_rounds = solve_p3(p2.schedule, p2.theta, params, devices)
        w = objective_w(len(p2.schedule), p2.theta, new_rounds, params)
        history.append({"iteration": it, "rounds_in": rounds, "schedule_size": len(p2.schedule),
                        "theta": p2.theta, "rounds": new_rounds, "objective": w})
        if best is None or w < best[0]:
            best = (w, p2, new_rounds)
        if abs(w - previous) <= conv_tol:
            converged = True
            break
        previous, rounds = w, new_rounds
    if not converged:
        log.warning("alternation did not converge within %d iterations", max_iters)

    w, p2, rounds = best
    return make_plan(
        p2.schedule, p2.theta, rounds, devices, params,
        mode=mode, predicted_objective=w, converged=converged,
        iterations=len(history), candidates=list(p2.candidates), history=history,
    )


def solve_nonconvex(devices, params: SystemParams, rounds: int, mode: str | None = None) -> SchedulePlan:
    """Non-convex mode: the caller fixes I; only (K, theta) is optimised.

    The design-dependent part of the average-squared-gradient bound is twice psi
    plus a term fixed by I, so minimising psi is enough.
    """
    devices = sort_devices(devices)
    if not 1 <= rounds <= params.total_rounds:
        raise DomainError(f"rounds must lie in [1, {params.total_rounds}]")
    mode = mode or infer_mode(devices)
    p2 = solve_p2_for(devices, params, rounds, mode)
    return make_plan(p2.schedule, p2.theta, rounds, devices, params, mode=mode, candidates=list(p2.candidates))


def full_participation_plan(devices, params: SystemParams, rounds: int) -> SchedulePlan:
    """Baseline: every device scheduled, theta = min(c_1, q_1, privacy cap)."""
    devices = sort_devices(devices)
    ids = [d.id for d in devices]
    cap = privacy_cap(params)
    theta = theta_max(ids, cap, devices, params.sum_power, rounds)
    theta = snap_theta(theta, ids, devices, cap, params.sum_power, rounds, params)
    return make_plan(ids, theta, rounds, devices, params)


# -- full-participation comparison ----------------------------------------------


def beats_full_participation(
    schedule: Iterable[int],
    theta: float,
    params: SystemParams,
    vectors: ChannelVectors,
) -> bool | None:
    """Sufficient condition for (K, theta) to beat scheduling every device.

    True when |K| theta >= 1 / sqrt(1/(N^2 c_1^2) - 8/(d sigma^2)). Returns None
    where the condition is undefined: the radical is not positive, or the
    privacy cap lies below min(c_1, q_1) (full participation is then optimal).
    """
    n = params.n_devices
    c1 = float(vectors.c[0])
    cap = privacy_cap(params)
    if min(c1, float(vectors.q[0])) > cap:
        return None
    if params.noise_std == 0:
        return None
    radical = 1.0 / (n**2 * c1**2) - 8.0 / (params.model_dim * params.noise_std**2)
    if radical <= 0:
        return None
    return len(tuple(schedule)) * theta >= 1.0 / math.sqrt(radical)


def full_participation_discrepancies(candidates: Iterable[CandidatePair], params: SystemParams, vectors: ChannelVectors):
    """Candidates the sufficient condition declares better than full participation
    while their psi says otherwise. The condition is one-sided, so a False verdict
    on a better candidate is not a disagreement."""
    cap = privacy_cap(params)
    full_theta = min(float(vectors.c[0]), float(vectors.q[0]), cap)
    full_psi = objective_psi(params.n_devices, full_theta, params)
    out = []
    for cand in candidates:
        if not cand.feasible:
            continue
        verdict = beats_full_participation(cand.schedule, cand.theta, params, vectors)
        if verdict is None:
            continue
        truly_better = cand.psi_value <= full_psi * (1.0 + 1e-12)
        if verdict and not truly_better:
            out.append({"rank_j": cand.rank_j, "predicate": verdict, "psi": cand.psi_value, "full_psi": full_psi})
    for d in out:
        log.info("full-participation condition disagrees with psi: %s", d)
    return out
