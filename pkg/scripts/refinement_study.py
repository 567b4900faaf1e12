"""Empirical refinement of the solver and of the finite-model bridge.

Prints V(0, x0) on two_control_markov for increasing n_t and lift
resolution, then the bridge optimal cost for increasing coarse grids next to
the solver value.  No rate is claimed; differences between successive rows
are printed so the trend can be read off.
"""

import argparse
import time


from pdpcontrol.builtins import builtin_document, builtin_problem
from pdpcontrol.discrete import bridge_from_pdp, optimal_cost
from pdpcontrol.model import problem_from_document
from pdpcontrol.paths import CadlagPath
from pdpcontrol.solver import QuadratureSpec, solve_value


def solver_rows(name, x0, nts, nodes):
    prev = None
    print(f"{'n_t':>5} {'nodes':>6} {'V(0,x0)':>12} {'change':>10} {'secs':>6}")
    for nt in nts:
        for n in nodes:
            doc = builtin_document(name)
            doc["lift"][0]["nodes"] = n
            d = problem_from_document(doc)
            t = time.perf_counter()
            V = solve_value(d, QuadratureSpec(nt))
            v = V.query_path(d, 0.0, CadlagPath.constant(x0, d.horizon))
            dv = "" if prev is None else f"{v - prev:+.2e}"
            print(f"{nt:5d} {n:6d} {v:12.6f} {dv:>10} {time.perf_counter() - t:6.2f}")
            prev = v
    return prev


def bridge_rows(name, x0, sizes, reference):
    d = builtin_problem(name)
    x = CadlagPath.constant(x0, d.horizon)
    print(f"{'n_times':>7} {'bridge J*':>12} {'gap to V':>10}")
    for n in sizes:
        model, _ = bridge_from_pdp(d, 0.0, x, stage_cap=3, n_times=n)
        j = optimal_cost(model, 0)
        print(f"{n:7d} {j:12.6f} {reference - j:10.4f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--problem", default="two_control_markov")
    ap.add_argument("--x0", type=float, default=0.5)
    ap.add_argument("--quick", action="store_true", help="smaller grids")
    args = ap.parse_args()
    nts = [8, 16, 32] if args.quick else [8, 16, 32, 64, 128]
    print(f"solver refinement on {args.problem}, x0 = {args.x0}")
    ref = solver_rows(args.problem, args.x0, nts, [41])
    print("\nlift refinement at n_t = 32")
    solver_rows(args.problem, args.x0, [32], [11, 21, 41, 81])
    print("\nbridge gap (jumps pushed to the next coarse node)")
    bridge_rows(args.problem, args.x0, [2, 3] if args.quick else [2, 3, 4], ref)
    print("\nunit_running bridge against T - s = 1")
    bridge_rows("unit_running", args.x0, [2, 3] if args.quick else [2, 3, 4], 1.0)


if __name__ == "__main__":
    main()
