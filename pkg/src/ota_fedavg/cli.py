"""Command-line front end: ``schedule``, ``simulate``, ``bounds``, ``verify``.

Exit codes: 0 success, 2 validation, 3 infeasible, 4 oracle mismatch,
5 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import bounds
from .config import Experiment, load_config, resolve_seed
from .errors import OracleMismatch, OtaError, ValidationError
from .fedavg_sim import RoundMetrics, format_metrics_csv, run_simulation, write_metrics_csv
from .oracle import MAX_BRUTE_FORCE_DEVICES, brute_force_p2, random_instance, verify_plan
from .privacy import per_round_epsilon
from .scheduler import (
    SchedulePlan,
    full_participation_discrepancies,
    privacy_cap,
    solve_nonconvex,
    solve_p1,
    solve_p2,
)
from .system_model import compute_channel_vectors, sort_devices

_VERIFY_RTOL = 1e-9


def _dump(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _load_plan(path: str) -> SchedulePlan:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ValidationError(f"{path}: cannot read plan ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    return SchedulePlan.from_dict(doc.get("plan", doc))


def make_schedule(exp: Experiment) -> SchedulePlan:
    if exp.params.convex:
        return solve_p1(exp.devices, exp.params, exp.solver.conv_tol, exp.solver.max_iters, exp.solver.mode)
    if exp.solver.rounds is None:
        raise ValidationError("solver.rounds: required in non-convex mode (strong_convexity = 0)")
    return solve_nonconvex(exp.devices, exp.params, exp.solver.rounds, exp.solver.mode)


def cmd_schedule(args) -> int:
    exp = load_config(args.config)
    plan = make_schedule(exp)
    _dump({"plan": plan.to_dict(), "privacy_cap": privacy_cap(exp.params)}, args.out)
    return 0


def cmd_simulate(args) -> int:
    exp = load_config(args.config)
    if exp.model is None:
        raise ValidationError("model.kind: simulate needs a quadratic or logistic model")
    plan = _load_plan(args.plan)
    audit = verify_plan(plan, exp.devices, exp.params)
    if not audit.passed:
        json.dump(audit.to_dict(), sys.stderr, indent=2, sort_keys=True)
        sys.stderr.write("\n")
        return 3
    seed = resolve_seed(args.seed, exp.solver.seed)
    metrics = run_simulation(plan, exp.model, exp.params, exp.devices, seed)
    if args.format == "json":
        _dump([_metrics_dict(m) for m in metrics], args.out)
    elif args.out:
        write_metrics_csv(args.out, metrics)
    else:
        format_metrics_csv(metrics, sys.stdout)
    return 0


def _metrics_dict(m: RoundMetrics) -> dict:
    return {
        "round": m.round_index, "loss": m.global_loss, "gap": m.optimality_gap,
        "grad_norm_sq": m.grad_norm_sq, "clips": m.clip_activations,
        "power_watts": m.power_spent, "epsilon": m.epsilon_this_round,
    }


def bounds_report(exp: Experiment, plan: SchedulePlan) -> dict:
    p = exp.params
    size = plan.schedule_size
    echo = {"rounds": plan.rounds, "schedule_size": size, "theta": plan.theta, "local_steps": plan.local_steps}
    eps = per_round_epsilon(p.grad_bound, plan.nu, p.noise_std, p.delta)
    out = {
        "privacy": {
            "epsilon_per_round": eps,
            "delta": p.delta,
            "budget": p.epsilon,
            "rounds": plan.rounds,
            "note": "per-round upper bound on leakage; not composed across rounds",
        },
        "bounds": [],
        "unavailable": [],
    }
    if p.convex:
        gap = bounds.optimality_gap_bound(plan.rounds, size, plan.theta, plan.local_steps, p)
        out["bounds"].append(bounds.report(bounds.CONVEX_GAP, gap, **echo).to_dict())
        noiseless = bounds.noiseless_gap_bound(p.total_rounds, p.initial_gap, p.strong_convexity, p.smoothness)
        out["bounds"].append(
            bounds.report(bounds.NOISELESS_GAP, noiseless, total_rounds=p.total_rounds).to_dict()
        )
    else:
        out["unavailable"].append({"bound_kind": bounds.CONVEX_GAP, "reason": "strong_convexity = 0"})
        out["unavailable"].append({"bound_kind": bounds.NOISELESS_GAP, "reason": "strong_convexity = 0"})
    avg = bounds.avg_sq_gradient_bound(plan.rounds, size, plan.theta, plan.local_steps, p)
    out["bounds"].append(bounds.report(bounds.NONCONVEX_AVG_GRAD, avg, **echo).to_dict())
    return out


def cmd_bounds(args) -> int:
    exp = load_config(args.config)
    plan = _load_plan(args.plan)
    _dump(bounds_report(exp, plan), args.out)
    return 0


def _compare(devices, params, cap, rounds, inject_fault=False) -> dict:
    sol = solve_p2(devices, cap, params.sum_power, rounds, params)
    psi = sol.psi_value * (1.25 if inject_fault else 1.0)
    ref = brute_force_p2(devices, cap, params.sum_power, rounds, params)
    ok = math.isclose(psi, ref[2], rel_tol=_VERIFY_RTOL)
    return {
        "n_devices": len(devices), "rounds": rounds, "cap": cap, "match": ok,
        "scheduler_psi": psi, "oracle_psi": ref[2],
        "scheduler_set": list(sol.schedule), "oracle_set": list(ref[0]),
    }


def cmd_verify(args) -> int:
    report: dict = {}
    failures = 0
    exp = load_config(args.config) if args.config else None
    seed = resolve_seed(args.seed, exp.solver.seed if exp else 0)
    plan = None

    if args.plan:
        if exp is None:
            raise ValidationError("--plan needs --config")
        plan = _load_plan(args.plan)
        audit = verify_plan(plan, exp.devices, exp.params)
        report["audit"] = audit.to_dict()
        failures += not audit.passed

    if exp is not None:
        if len(exp.devices) > MAX_BRUTE_FORCE_DEVICES:
            raise ValidationError(
                f"fleet: brute-force check refused for {len(exp.devices)} devices (limit {MAX_BRUTE_FORCE_DEVICES})"
            )
        if plan is not None:
            rounds = plan.rounds
        else:
            rounds = exp.solver.rounds or exp.params.total_rounds
        cap = privacy_cap(exp.params)
        fleet = _compare(exp.devices, exp.params, cap, rounds, args.inject_fault)
        report["fleet"] = fleet
        failures += not fleet["match"]
        vectors = compute_channel_vectors(sort_devices(exp.devices), exp.params.sum_power, rounds)
        sol = solve_p2(exp.devices, cap, exp.params.sum_power, rounds, exp.params)
        report["full_participation_discrepancies"] = full_participation_discrepancies(
            sol.candidates, exp.params, vectors
        )

    if args.instances:
        rng = np.random.default_rng(seed)
        mismatches = []
        for i in range(args.instances):
            devices, params, cap, rounds = random_instance(rng)
            res = _compare(devices, params, cap, rounds, args.inject_fault)
            if not res["match"]:
                mismatches.append({"instance": i, **res})
        report["instances"] = {"count": args.instances, "seed": seed, "mismatches": mismatches}
        failures += len(mismatches)

    report["passed"] = failures == 0
    _dump(report, args.out)
    if failures:
        raise OracleMismatch(f"{failures} verification failure(s)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ota-fedavg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("schedule", help="solve for scheduled set, alignment factor and rounds")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("simulate", help="run DP-OTA-FedAvg with a plan and emit per-round metrics")
    p.add_argument("--config", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bounds", help="evaluate privacy and convergence bounds for a plan")
    p.add_argument("--config", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("verify", help="audit a plan and cross-check the scheduler against brute force")
    p.add_argument("--config")
    p.add_argument("--plan")
    p.add_argument("--instances", type=int, default=200)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except OtaError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return exc.exit_code
    except FloatingPointError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 5


if __name__ == "__main__":
    sys.exit(main())
