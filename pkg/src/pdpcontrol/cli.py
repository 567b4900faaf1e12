"""Command-line front end: ``pdpctl check|simulate|solve|evaluate|verify|mdp``.

Exit codes: 0 success, 1 check failure, 2 input error, 3 numeric failure.
Logs go to stderr; artifacts only to the declared files.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .builtins import PROBLEMS, TWO_STAGE_MDP, builtin_document
from .discrete import (
    BudgetExceeded,
    bellman_policy,
    check_nonrandomized_sufficiency,
    enumerate_deterministic,
    load_model,
    model_from_tables,
    optimal_cost,
    policy_cost,
    rollout_marginal,
)
from .expr import ExpressionError
from .flow import FlowDivergenceError, TimeGrid
from .model import ModelError, ProblemData, parse_problem, problem_from_document, validate_assumptions
from .paths import CadlagPath, from_csv
from .simulator import (
    CellSchedulePolicy,
    ConstantPolicy,
    RunawayError,
    estimate_cost,
    simulate_trajectory,
)
from .solver import (
    NonContractionError,
    QuadratureSpec,
    ValueFileError,
    apply_G,
    build_partition,
    extract_policy,
    read_value_file,
    solve_value,
    write_value_file,
)
from . import verification as ver

log = logging.getLogger("pdpctl")

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3
SEED_ENV = "PDPCTL_SEED"
FIXED_POINT_QUAD = 1e-3
CHECKS = ("dpp", "fixedpoint", "contraction", "lipschitz", "bracket", "minimax", "regularity", "flow", "stability")
MDP_CHECKS = ("marginal", "cost", "optimal", "sufficiency")


class InputError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    problem: str | None = None
    threads: int = 1
    seed: int = 0
    dt: float | None = None
    nt: int = 64
    switches: int = 0
    kappa: float = 0.39
    tol: float = 1e-6
    n_rep: int = 1000
    samples: int = 50
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.threads < 1:
            raise InputError("--threads must be at least 1")
        for name in ("nt", "n_rep", "samples"):
            if getattr(self, name) < 1:
                raise InputError(f"--{name.replace('_', '-')} must be positive")
        if self.dt is not None and self.dt <= 0:
            raise InputError("--dt must be positive")
        if not 0 < self.kappa < 1:
            raise InputError("--kappa must lie in (0, 1)")
        if self.tol <= 0:
            raise InputError("--tol must be positive")


# -- input helpers -------------------------------------------------------------------------


def parse_problem_spec(text: str) -> ProblemData:
    return parse_problem(text)


def load_problem(ref: str) -> ProblemData:
    if ref is None:
        raise InputError("--problem is required")
    if ref.startswith("builtin:"):
        return problem_from_document(builtin_document(ref.split(":", 1)[1]))
    try:
        text = open(ref).read()
    except OSError as exc:
        raise InputError(f"cannot read problem file {ref}: {exc}") from None
    return parse_problem_spec(text)


def initial_path(data: ProblemData, opts: dict) -> CadlagPath:
    if opts.get("path"):
        try:
            x = from_csv(open(opts["path"]).read())
        except OSError as exc:
            raise InputError(f"cannot read path file: {exc}") from None
        return CadlagPath(x.times, x.values, max(data.horizon, x.horizon), x.is_jump)
    raw = opts.get("x0")
    vals = [0.0] * data.dimension if raw is None else [float(v) for v in str(raw).split(",")]
    if len(vals) != data.dimension:
        raise InputError(f"--x0 has {len(vals)} components, problem has dimension {data.dimension}")
    return CadlagPath(np.array([0.0]), np.array([vals]), data.horizon)


def quad_of(cfg: RunConfig) -> QuadratureSpec:
    return QuadratureSpec(cfg.nt, cfg.switches)


def solver_grid(data: ProblemData, cfg: RunConfig) -> TimeGrid:
    part = build_partition(data, cfg.kappa)
    return TimeGrid(data.horizon, part.n_intervals * cfg.nt)


def make_policy(data: ProblemData, cfg: RunConfig, ref: str):
    """Policy and simulation grid from ``builtin:default``, ``builtin:constant:<label>``,
    ``builtin:schedule:<l0,l1,...>``, ``builtin:extracted`` or a value file."""
    quad = quad_of(cfg)
    if ref.startswith("builtin:"):
        _, kind, arg = (ref.split(":", 2) + [""])[:3]
        if kind == "default":
            kind, arg = "constant", data.default_control
        if kind == "constant":
            grid = TimeGrid.from_dt(data.horizon, cfg.dt) if cfg.dt else solver_grid(data, cfg)
            return ConstantPolicy(data.label_index(arg), name=f"constant:{arg}"), grid
        if kind == "schedule":
            grid = solver_grid(data, cfg)
            labels = tuple(data.label_index(a) for a in arg.split(","))
            return CellSchedulePolicy(labels, grid, quad.cell_steps, name=f"schedule:{arg}"), grid
        if kind == "extracted":
            vf = solve_value(data, quad, cfg.kappa, cfg.tol, threads=cfg.threads)
            return extract_policy(data, vf), vf.grid
        raise InputError(f"unknown builtin policy {ref!r}")
    vf, phash = read_value_file(ref, data)
    if phash != data.problem_hash():
        raise InputError("value file was solved for a different problem")
    return extract_policy(data, vf), vf.grid


def policy_class_note(data: ProblemData) -> str:
    """Whether jump feedback on the lifted features can see everything a history policy can."""
    if data.max_mask.any() or data.int_mask.any():
        return ("jump feedback on lifted features; the features do not determine the full jump and "
                "control history, so history-dependent policies form a larger class")
    return "jump feedback on the current state; coefficients depend on the current state only"


def stamp(data: ProblemData | None, payload: dict) -> dict:
    out = {"tool_version": __version__}
    if data is not None:
        out["problem_hash"] = data.problem_hash()
    out.update(payload)
    return out


def write_json(path: str | None, payload: dict) -> None:
    if not path:
        return
    with open(path, "w") as fh:
        fh.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def trajectory_csv(data: ProblemData, traj) -> str:
    buf = io.StringIO()
    buf.write(f"# problem_hash={data.problem_hash()} tool_version={__version__}\n")
    cols = ["t"] + [f"v{i + 1}" for i in range(data.dimension)] + ["stage", "control_label", "is_jump"]
    buf.write(",".join(cols) + "\n")
    p = traj.path
    for i in range(len(p.times)):
        row = [repr(float(p.times[i]))] + [repr(float(v)) for v in p.values[i]]
        row += [str(int(traj.node_stage[i])), data.controls[int(traj.node_labels[i])], str(int(p.is_jump[i]))]
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


# -- subcommands -----------------------------------------------------------------------------


def cmd_check(cfg: RunConfig) -> int:
    data = load_problem(cfg.problem)
    rep = validate_assumptions(data, cfg.samples, cfg.seed)
    write_json(cfg.options.get("out"), stamp(data, {"validation": rep.to_dict()}))
    if cfg.options.get("echo"):
        with open(cfg.options["echo"], "w") as fh:
            fh.write(data.canonical_json())
    log.info("assumption validation %s (%d samples)", "passed" if rep.ok else "FAILED", cfg.samples)
    return EXIT_OK if rep.ok else EXIT_CHECK


def cmd_simulate(cfg: RunConfig) -> int:
    data = load_problem(cfg.problem)
    x = initial_path(data, cfg.options)
    s = float(cfg.options.get("s") or 0.0)
    policy, grid = make_policy(data, cfg, cfg.options.get("policy") or "builtin:default")
    crn = bool(cfg.options.get("crn"))
    if cfg.options.get("out"):
        traj = simulate_trajectory(data, s, x, policy, cfg.seed, grid, crn=crn)
        with open(cfg.options["out"], "w") as fh:
            fh.write(trajectory_csv(data, traj))
    if cfg.n_rep >= 2:
        res = estimate_cost(data, s, x, policy, cfg.n_rep, cfg.seed, grid, crn=crn, threads=cfg.threads)
        log.info("mean cost %.6f +- %.6f over %d replications", res.mean, res.half_width_95, res.n_rep)
        write_json(cfg.options.get("stats"), stamp(data, {
            "policy": policy.name, "policy_class": policy_class_note(data), "s": s, "seed": cfg.seed, "crn": crn,
            "grid_steps": grid.steps, **res.to_dict()}))
    return EXIT_OK


def cmd_solve(cfg: RunConfig) -> int:
    data = load_problem(cfg.problem)
    vf = solve_value(data, quad_of(cfg), cfg.kappa, cfg.tol, threads=cfg.threads)
    if cfg.options.get("out"):
        write_value_file(cfg.options["out"], vf, data.problem_hash(), __version__)
    write_json(cfg.options.get("report"), stamp(data, {
        "kappa_target": cfg.kappa, "tol_fix": cfg.tol, "n_t": cfg.nt, "switches": cfg.switches,
        "knots": vf.partition.knots.tolist(), "mesh": vf.partition.mesh, "sup_norm": vf.sup_norm,
        "policy_class": policy_class_note(data), "intervals": vf.meta["intervals"]}))
    log.info("solved on %d intervals, sup norm %.6f", vf.partition.n_intervals, vf.sup_norm)
    return EXIT_OK


def _value_for(data: ProblemData, cfg: RunConfig):
    ref = cfg.options.get("value")
    if ref:
        vf, phash = read_value_file(ref, data)
        if phash != data.problem_hash():
            raise InputError("value file was solved for a different problem")
        return vf
    return solve_value(data, quad_of(cfg), cfg.kappa, cfg.tol, threads=cfg.threads)


def cmd_evaluate(cfg: RunConfig) -> int:
    data = load_problem(cfg.problem)
    vf = _value_for(data, cfg)
    x = initial_path(data, cfg.options)
    s = float(cfg.options.get("s") or 0.0)
    z = data.features_of_path(x, s)[None, :]
    val, clamped = vf.query(s, z)
    out = {"s": s, "value": float(val[0]), "policy_class": policy_class_note(data),
           "clamped": bool(np.any(clamped)),
           "label_values": dict(zip(data.controls, map(float, vf.label_values(s, z)[0]))),
           "fixed_point_residual": abs(apply_G(data, vf, s, x) - float(val[0]))}
    if cfg.n_rep >= 2:
        res = estimate_cost(data, s, x, extract_policy(data, vf), cfg.n_rep, cfg.seed, vf.grid,
                            crn=True, threads=cfg.threads)
        out["monte_carlo"] = res.to_dict()
    write_json(cfg.options.get("out"), stamp(data, out))
    log.info("V(%.4f, x) = %.6f", s, out["value"])
    return EXIT_OK


def run_checks(data: ProblemData, cfg: RunConfig, names) -> list:
    reports = []
    needs_value = {"dpp", "fixedpoint", "lipschitz", "bracket", "minimax", "stability"}
    vf = _value_for(data, cfg) if needs_value.intersection(names) else None
    x0 = initial_path(data, cfg.options)
    for name in names:
        log.info("running check %s", name)
        if name == "dpp":
            r = ver.check_dpp(data, vf, cfg.samples, 5e-3, cfg.seed)
        elif name == "fixedpoint":
            # the lift interpolation across a control-switching kink costs O(1e-4)
            r = ver.check_fixed_point(data, vf, cfg.samples, FIXED_POINT_QUAD + 10 * cfg.tol, cfg.seed,
                                      tol_fix=cfg.tol)
        elif name == "contraction":
            part = build_partition(data, cfg.kappa)
            r = None
            for k in range(part.n_intervals):
                rk = ver.estimate_contraction(data, k, None, cfg.samples, cfg.seed + k, quad_of(cfg), cfg.kappa)
                reports.append(rk)
            continue
        elif name == "lipschitz":
            r = ver.estimate_lipschitz(data, vf, cfg.samples, cfg.seed)
        elif name == "bracket":
            r = ver.check_monotone_bracket(data, None, None, 30, 1e-4, vf, quad_of(cfg), cfg.kappa)
        elif name == "minimax":
            r = ver.check_minimax_along_characteristics(data, vf, 0.0, x0, [-1.0, -0.5, 0.0, 0.5, 1.0], 1e-2)
        elif name == "regularity":
            r = ver.regularity_counterexample()
        elif name == "flow":
            r = ver.check_flow_bounds(data, cfg.samples, cfg.seed)
        elif name == "stability":
            r = ver.check_interval_stability(data, vf, cfg.samples, cfg.seed)
        else:
            raise InputError(f"unknown check {name!r}")
        reports.append(r)
    return reports


def cmd_verify(cfg: RunConfig) -> int:
    sel = cfg.options.get("check") or "all"
    names = list(CHECKS) if sel == "all" else sel.split(",")
    bad = [n for n in names if n not in CHECKS]
    if bad:
        raise InputError(f"unknown check(s) {bad}; choose from {list(CHECKS)} or all")
    data = None if names == ["regularity"] and not cfg.problem else load_problem(cfg.problem)
    reports = [ver.regularity_counterexample()] if data is None else run_checks(data, cfg, names)
    ok = all(r.passed for r in reports)
    for r in reports:
        log.info("%-12s %s worst=%.3e tol=%.3e", r.name, "PASS" if r.passed else "FAIL", r.worst, r.tol)
    write_json(cfg.options.get("out"), stamp(data, {"seed": cfg.seed, "passed": ok,
                                                    "checks": [r.to_dict() for r in reports]}))
    return EXIT_OK if ok else EXIT_CHECK


def cmd_mdp(cfg: RunConfig) -> int:
    ref = cfg.options.get("model") or "builtin:two_stage"
    if ref == "builtin:two_stage":
        model = model_from_tables(TWO_STAGE_MDP)
    else:
        try:
            model = load_model(open(ref).read())
        except OSError as exc:
            raise InputError(f"cannot read model file: {exc}") from None
        except (KeyError, ValueError, json.JSONDecodeError) as exc:
            raise InputError(f"bad model file: {exc}") from None
    state = cfg.options.get("state") or model.states[0]
    if state not in model.states:
        raise InputError(f"unknown state {state!r}")
    x = model.states.index(state)
    sel = cfg.options.get("check") or "all"
    names = list(MDP_CHECKS) if sel == "all" else sel.split(",")
    out = {"state": state, "seed": cfg.seed}
    ok = True
    for name in names:
        if name == "marginal":
            p0 = np.zeros(model.n_states)
            p0[x] = 1.0
            marg = rollout_marginal(model, bellman_policy(model, x), p0, model.horizon)
            mass = float(sum(marg.values()))
            out["marginal"] = {"histories": len(marg), "total_mass": mass}
            ok &= abs(mass - 1.0) <= 1e-10
        elif name == "cost":
            out["cost"] = {"bellman_policy": policy_cost(model, bellman_policy(model, x), x)}
        elif name == "optimal":
            j = optimal_cost(model, x)
            best, costs = enumerate_deterministic(model, x)
            out["optimal"] = {"optimal_cost": j, "enumerated_min": float(best), "n_policies": len(costs)}
            ok &= abs(j - best) <= 1e-12
        elif name == "sufficiency":
            rep = check_nonrandomized_sufficiency(model, x, cfg.samples, cfg.seed)
            out["sufficiency"] = ver._jsonable(rep.to_dict())
            ok &= bool(rep.passed)
        else:
            raise InputError(f"unknown mdp check {name!r}; choose from {list(MDP_CHECKS)} or all")
    out["passed"] = bool(ok)
    write_json(cfg.options.get("out"), stamp(None, out))
    log.info("mdp checks %s", "passed" if ok else "FAILED")
    return EXIT_OK if ok else EXIT_CHECK


COMMANDS = {"check": cmd_check, "simulate": cmd_simulate, "solve": cmd_solve, "evaluate": cmd_evaluate,
            "verify": cmd_verify, "mdp": cmd_mdp}


def run(cfg: RunConfig) -> int:
    try:
        return COMMANDS[cfg.command](cfg)
    except (InputError, ModelError, ExpressionError, ValueFileError, BudgetExceeded, OSError,
            json.JSONDecodeError) as exc:
        log.error("%s: input error: %s", cfg.command, exc)
        return EXIT_INPUT
    except (NonContractionError, FlowDivergenceError, RunawayError, ArithmeticError, FloatingPointError) as exc:
        log.error("%s: numeric failure: %s", cfg.command, exc)
        return EXIT_NUMERIC
    except ValueError as exc:
        log.error("%s: input error: %s", cfg.command, exc)
        return EXIT_INPUT


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--problem", help="problem file or builtin:<name> (" + ", ".join(sorted(PROBLEMS)) + ")")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--seed", type=int, default=int(os.environ.get(SEED_ENV, "0")))
    common.add_argument("--dt", type=float)
    common.add_argument("--nt", type=int, default=64)
    common.add_argument("--switches", type=int, default=0)
    common.add_argument("--kappa", type=float, default=0.39)
    common.add_argument("--tol", type=float, default=1e-6)
    common.add_argument("--n-rep", type=int, default=1000)
    common.add_argument("--samples", type=int, default=50)
    common.add_argument("--s", type=float, default=0.0, help="start time")
    common.add_argument("--x0", help="constant initial path, comma separated")
    common.add_argument("--path", help="initial path CSV (t,v1..vd,is_jump)")
    common.add_argument("--out")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="pdpctl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    c = sub.add_parser("check", parents=[common], help="validate a problem and echo its canonical form")
    c.add_argument("--echo")
    c = sub.add_parser("simulate", parents=[common], help="simulate trajectories and estimate cost")
    c.add_argument("--policy", default="builtin:default")
    c.add_argument("--stats")
    c.add_argument("--crn", action="store_true")
    c = sub.add_parser("solve", parents=[common], help="compute the value function")
    c.add_argument("--report")
    c = sub.add_parser("evaluate", parents=[common], help="query a value function at (s, x)")
    c.add_argument("--value")
    c = sub.add_parser("verify", parents=[common], help="run numerical checks")
    c.add_argument("--check", default="all")
    c.add_argument("--value")
    c = sub.add_parser("mdp", parents=[common], help="finite decision model checks")
    c.add_argument("--model", default="builtin:two_stage")
    c.add_argument("--state")
    c.add_argument("--check", default="all")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    keys = ("problem", "threads", "seed", "dt", "nt", "switches", "kappa", "tol", "n_rep", "samples")
    try:
        cfg = RunConfig(args.command, **{k: getattr(args, k) for k in keys},
                        options={k: v for k, v in vars(args).items() if k not in keys and k != "command"})
    except InputError as exc:
        log.error("%s: input error: %s", args.command, exc)
        return EXIT_INPUT
    if cfg.command == "evaluate" and cfg.options.get("out") is None:
        log.warning("no --out given; results are only logged")
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
