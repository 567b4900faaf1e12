"""Throughput of the Monte Carlo estimator for several chunk and thread settings.

Also confirms that every setting returns the same costs bit for bit.
"""

import argparse
import time

import numpy as np

from pdpcontrol.builtins import builtin_problem
from pdpcontrol.flow import TimeGrid
from pdpcontrol.paths import CadlagPath
from pdpcontrol.simulator import ConstantPolicy, estimate_cost


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--problem", default="running_max_pathdep")
    ap.add_argument("--n-rep", type=int, default=100_000)
    ap.add_argument("--steps", type=int, default=192)
    args = ap.parse_args()
    d = builtin_problem(args.problem)
    x = CadlagPath.constant(0.5, d.horizon)
    grid = TimeGrid(d.horizon, args.steps)
    ref = None
    print(f"{'threads':>7} {'chunk':>6} {'reps/s':>10} {'mean':>10} {'same':>5}")
    for threads, chunk in ((1, 16384), (1, 4096), (4, 16384), (4, 4096)):
        t = time.perf_counter()
        res = estimate_cost(d, 0.0, x, ConstantPolicy(0), args.n_rep, 1, grid, threads=threads, chunk=chunk)
        rate = args.n_rep / (time.perf_counter() - t)
        same = ref is None or np.array_equal(ref, res.costs)
        ref = res.costs if ref is None else ref
        print(f"{threads:7d} {chunk:6d} {rate:10.0f} {res.mean:10.6f} {str(same):>5}")


if __name__ == "__main__":
    main()
