"""Solve two_control_markov, then compare the extracted policy with every
one-label-per-interval schedule by Monte Carlo under common random numbers."""

import argparse

from pdpcontrol.builtins import builtin_problem
from pdpcontrol.paths import CadlagPath
from pdpcontrol.simulator import CellSchedulePolicy, estimate_cost
from pdpcontrol.solver import QuadratureSpec, enumerate_schedules, extract_policy, solve_value


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--x0", type=float, default=0.5)
    ap.add_argument("--n-rep", type=int, default=50_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    d = builtin_problem("two_control_markov")
    V = solve_value(d, QuadratureSpec(64))
    x = CadlagPath.constant(args.x0, d.horizon)
    print(f"V(0, {args.x0}) = {V.query_path(d, 0.0, x):.6f}")
    res = estimate_cost(d, 0.0, x, extract_policy(d, V), args.n_rep, args.seed, V.grid, crn=True)
    print(f"{'extracted':>12} {res.mean:.6f} +- {res.half_width_95:.6f}")
    for sched in enumerate_schedules(d.n_controls, V.grid.steps // V.cell_steps):
        labels = tuple(int(a) for a in sched)
        pol = CellSchedulePolicy(labels, V.grid, V.cell_steps)
        res = estimate_cost(d, 0.0, x, pol, args.n_rep, args.seed, V.grid, crn=True)
        name = "-".join(d.controls[a] for a in labels)
        print(f"{name:>12} {res.mean:.6f} +- {res.half_width_95:.6f}")


if __name__ == "__main__":
    main()
