"""W(I) over the admissible round counts for the scheduled set of a config.

Prints a CSV of (rounds, local_steps, objective) and marks the minimiser.
"""

import argparse
import csv
import sys

from ota_fedavg.config import load_config
from ota_fedavg.scheduler import feasible_round_range, objective_w, solve_p1


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", required=True)
    args = ap.parse_args(argv)

    exp = load_config(args.config)
    plan = solve_p1(exp.devices, exp.params, exp.solver.conv_tol, exp.solver.max_iters, exp.solver.mode)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["rounds", "local_steps", "objective", "chosen"])
    for i in feasible_round_range(plan.schedule, plan.theta, exp.params, exp.devices):
        w = objective_w(plan.schedule_size, plan.theta, i, exp.params)
        writer.writerow([i, exp.params.total_rounds // i, f"{w:.10g}", int(i == plan.rounds)])


if __name__ == "__main__":
    main()
