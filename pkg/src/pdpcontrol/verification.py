"""Numerical checks of the value function, operator and flow estimates.

Every check returns a ``CheckReport`` whose ``passed`` flag is exactly
``worst <= tol``.  Secondary conditions that fail (a monotonicity violation,
a mesh that is too coarse) set ``worst`` to ``inf`` and name a witness in
``notes``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .flow import OpenLoopControl, TimeGrid, solve_flow
from .model import ProblemData, sample_kernel
from .paths import CadlagPath, concat, pseudo_metric, stop, sup_dist, sup_norm
from .solver import (
    IntervalOperator,
    LiftGrid,
    QuadratureSpec,
    ValueFunction,
    _direct,
    _table_psi,
    apply_G,
    apply_interval_G_at,
    build_partition,
    enumerate_schedules,
    hamiltonian_lifted,
    solve_value,
)


@dataclass
class CheckReport:
    name: str
    samples: int
    worst: float
    tol: float
    seed: int | None = None
    notes: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.worst <= self.tol)

    def to_dict(self) -> dict:
        return {"name": self.name, "samples": self.samples, "worst": _num(self.worst), "tol": _num(self.tol),
                "passed": self.passed, "seed": self.seed, "notes": _jsonable(self.notes)}


def _num(v):
    v = float(v)
    return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    return obj


# -- sampled model paths ---------------------------------------------------------------


def _state_bounds(data: ProblemData):
    lo = np.array([data.lift[i].lower for i in data.term_index])
    hi = np.array([data.lift[i].upper for i in data.term_index])
    return lo, hi


def sample_model_path(data: ProblemData, s: float, rng: np.random.Generator, grid: TimeGrid,
                      max_jumps: int = 3) -> CadlagPath:
    """Path on ``[0, s]`` built from flow segments under random labels and kernel jumps.

    Jump times are grid nodes, so the lifted features of the result are what
    the solver's own dynamics would produce.
    """
    lo, hi = _state_bounds(data)
    x = CadlagPath(np.array([0.0]), rng.uniform(lo, hi)[None, :], data.horizon)
    if s <= 0.0:
        return x
    inner = grid.times[(grid.times > 0.0) & (grid.times < s)]
    k = min(int(rng.integers(0, max_jumps + 1)), len(inner))
    jumps = np.sort(rng.choice(inner, size=k, replace=False)) if k else np.zeros(0)
    ends = list(jumps) + [s]
    a = 0.0
    for i, b in enumerate(ends):
        lab = int(rng.integers(data.n_controls))
        if b > a:
            phi = solve_flow(data, a, x, OpenLoopControl.constant(lab), grid)
            x = stop(phi.path(), b)
        if i < k:
            x = concat(x, b, sample_kernel(data, b, x, lab, float(rng.uniform())))
        a = b
    return x


def _perturbed(data: ProblemData, x: CadlagPath, s: float, rng: np.random.Generator, scale: float) -> CadlagPath:
    """``x`` with node values on ``[0, s]`` moved by at most ``scale``, kept inside the state box."""
    lo, hi = _state_bounds(data)
    vals = np.array(x.values)
    mask = x.times <= s
    vals[mask] = np.clip(vals[mask] + rng.uniform(-scale, scale, vals[mask].shape), lo, hi)
    return stop(CadlagPath(x.times, vals, x.horizon, x.is_jump), s)


def _random_grid_time(rng, grid: TimeGrid, lo: int = 0, hi: int | None = None) -> int:
    hi = grid.steps if hi is None else hi
    return int(rng.integers(lo, hi + 1))


# -- fixed point and dynamic programming ---------------------------------------------------


def check_fixed_point(data: ProblemData, V: ValueFunction, samples: int, tol: float, seed: int = 0,
                      tol_fix: float = 1e-6) -> CheckReport:
    """``|G V(s, x) - V(s, x)|`` at sampled grid times and model paths.

    Residuals at starts whose lifted state is a lift node measure the solver
    budget; elsewhere the multilinear interpolation adds a quadrature part.
    Both are reported.
    """
    rng = np.random.default_rng(seed)
    grid = V.grid
    on_node, off_node = 0.0, 0.0
    for i in range(samples):
        s = float(grid.time(_random_grid_time(rng, grid, 0, grid.steps - 1)))
        if i % 2 == 0:
            node = V.lift.nodes[int(rng.integers(V.lift.size))]
            x = CadlagPath(np.array([0.0]), data.state_of(node)[None, :], data.horizon)
            z = data.features_of_path(x, s)
            exact = bool(np.array_equal(z, node))
        else:
            x = sample_model_path(data, s, rng, grid)
            exact = False
        r = abs(apply_G(data, V, s, x) - V.query_path(data, s, x))
        if exact:
            on_node = max(on_node, r)
        else:
            off_node = max(off_node, r)
    worst = max(on_node, off_node)
    return CheckReport("fixedpoint", samples, worst, tol, seed,
                       {"solver_budget": tol_fix, "quadrature_budget": max(tol - tol_fix, 0.0),
                        "worst_on_lift_nodes": on_node, "worst_off_lift_nodes": off_node})


def dpp_residual(data: ProblemData, V: ValueFunction, s: float, s1: float, x: CadlagPath) -> float:
    """``|min_a {cost on [s, s1] + V(s1)} - V(s, x)|`` with ``s1`` a grid time."""
    z0 = data.features_of_path(x, s)
    rhs = float(apply_interval_G_at(data, V, s, s1, z0)[0])
    return abs(rhs - V.query_path(data, s, x))


def _cell_times(V: ValueFunction) -> np.ndarray:
    return V.grid.time(np.arange(0, V.grid.steps + 1, V.cell_steps))


def check_dpp(data: ProblemData, V: ValueFunction, samples: int, tol: float, seed: int = 0,
              s1_on_cells: bool = False) -> CheckReport:
    """Dynamic programming residual at sampled ``(s, s1, x)``, ``s <= s1`` grid times.

    With ``s1_on_cells`` the intermediate time is a control-cell boundary.
    Inside a cell the tabulated value may switch label at ``s1`` while a
    single start at ``s`` may not, so mid-cell residuals also contain a gap
    of the control class; the flag separates the two.
    """
    rng = np.random.default_rng(seed)
    grid = V.grid
    cells = _cell_times(V)
    worst = 0.0
    worst_at = None
    for _ in range(samples):
        g = _random_grid_time(rng, grid, 0, grid.steps - 1)
        s = float(grid.time(g))
        if s1_on_cells:
            later = cells[cells >= s]
            s1 = float(later[int(rng.integers(len(later)))])
        else:
            s1 = float(grid.time(_random_grid_time(rng, grid, g, grid.steps)))
        x = sample_model_path(data, s, rng, grid)
        r = dpp_residual(data, V, s, s1, x)
        if r > worst:
            worst, worst_at = r, (s, s1)
    return CheckReport("dpp", samples, worst, tol, seed,
                       {"worst_at": worst_at, "s1_on_cell_boundaries": s1_on_cells})


# -- contraction and Lipschitz estimates -------------------------------------------------------


def estimate_contraction(data: ProblemData, interval: int, eta=None, n_pairs: int = 100, seed: int = 0,
                         quad: QuadratureSpec = QuadratureSpec(), kappa_target: float = 0.39,
                         scale: float | None = None) -> CheckReport:
    """Sup-ratio ``|G psi1 - G psi2| / |psi1 - psi2|`` of one interval operator.

    ``eta`` is the terminal data on lifted states (default: terminal cost).
    Pairs are uniform on ``[-scale, scale]``; one extra pair is a constant
    shift.  The tolerance is ``1 - exp(-C_lambda * Delta) + 1e-6``.
    """
    part = build_partition(data, kappa_target)
    if not 0 <= interval < part.n_intervals:
        raise ValueError(f"interval {interval} outside 0..{part.n_intervals - 1}")
    grid = TimeGrid(data.horizon, part.n_intervals * quad.n_t)
    lift = LiftGrid(data)
    eta = data.terminal_cost if eta is None else eta
    g0, g1 = interval * quad.n_t, (interval + 1) * quad.n_t
    op = IntervalOperator(data, grid, lift, g0, g1, quad.cell_steps, eta)
    rng = np.random.default_rng(seed)
    scale = data.constants.Cf * (1.0 + data.horizon) if scale is None else scale
    size = (op.S + 1) * lift.size
    rows = op.S * lift.size
    ratios = []
    for _ in range(n_pairs):
        p1 = rng.uniform(-scale, scale, size)
        p2 = rng.uniform(-scale, scale, size)
        den = np.max(np.abs(p1 - p2))
        if den == 0.0:
            continue
        ratios.append(np.max(np.abs(op.apply(p1)[:rows] - op.apply(p2)[:rows])) / den)
    p1 = rng.uniform(-scale, scale, size)
    shift = np.max(np.abs(op.apply(p1 + 1.0)[:rows] - op.apply(p1)[:rows]))
    ratios.append(shift)
    delta = float(part.knots[interval + 1] - part.knots[interval])
    bound = 1.0 - math.exp(-data.constants.Clam * delta)
    worst = float(max(ratios))
    notes = {"interval": interval, "delta": delta, "bound": bound, "constant_shift_ratio": float(shift),
             "mesh": part.mesh, "n_intervals": part.n_intervals}
    if not part.mesh < 0.5:
        notes["failure"] = f"mesh {part.mesh} is not below 1/2"
        worst = math.inf
    return CheckReport("contraction", len(ratios), worst, bound + 1e-6, seed, notes)


def check_L(data: ProblemData, psi_sup: float) -> float:
    """``e^{L_f T} max{L_f, L_f C_f, L_f |psi|, C_f, C_lambda L_Q, C_lambda, 1}``."""
    c = data.constants
    return math.exp(c.Lf * data.horizon) * max(c.Lf, c.Lf * c.Cf, c.Lf * psi_sup, c.Cf, c.Clam * c.LQ, c.Clam, 1.0)


def stability_bound(data: ProblemData, c: float, c_eta: float, length: float, psi_sup: float, ref_sup: float) -> float:
    """Lipschitz bound of one interval operator for inputs with constants ``c`` (psi), ``c_eta`` (eta)."""
    return c_eta * math.exp(data.constants.Lf * data.horizon) + 6.0 * check_L(data, ref_sup) * length * (1.0 + c) * (1.0 + psi_sup)


def lipschitz_cap(data: ProblemData, V: ValueFunction) -> float:
    """Finite cap for the value function's Lipschitz ratio: the one-interval bound over
    the whole horizon with both input constants equal to ``L_f``."""
    Lf = data.constants.Lf
    return stability_bound(data, Lf, Lf, data.horizon, V.sup_norm, V.sup_norm)


def estimate_lipschitz(data: ProblemData, V: ValueFunction, n_pairs: int, seed: int = 0,
                       L_cap: float | None = None) -> CheckReport:
    """Max of ``|V(s, x) - V(s, y)| / sup_dist(x, y, s)`` over sampled pairs."""
    rng = np.random.default_rng(seed)
    grid = V.grid
    cap = lipschitz_cap(data, V) if L_cap is None else L_cap
    worst = 0.0
    used = 0
    for i in range(n_pairs):
        s = float(grid.time(_random_grid_time(rng, grid, 1, grid.steps)))
        x = sample_model_path(data, s, rng, grid)
        y = _perturbed(data, x, s, rng, 0.05) if i % 2 else sample_model_path(data, s, rng, grid)
        d = sup_dist(x, y, s)
        if d == 0.0:
            continue
        used += 1
        worst = max(worst, abs(V.query_path(data, s, x) - V.query_path(data, s, y)) / d)
    return CheckReport("lipschitz", used, worst, cap, seed, {"empirical_L": worst, "cap": cap})


def check_interval_stability(data: ProblemData, V: ValueFunction, n_pairs: int, seed: int = 0,
                             c: float = 1.0, c_eta: float = 1.0) -> CheckReport:
    """One-interval operator applied to ``psi = c x(t)`` with terminal data ``eta = c_eta x(t)``.

    Both inputs have known Lipschitz constants in the stopped sup-norm, so the
    measured ratio of output differences is compared with the closed-form
    stability bound.  ``|V|`` stands in for the sup norm of the fixed point.
    """
    rng = np.random.default_rng(seed)
    grid = V.grid
    part = V.partition
    ti = data.term_index[0]
    psi = lambda t, z: c * z[..., ti]  # noqa: E731
    eta = lambda z: c_eta * z[..., ti]  # noqa: E731
    lo, hi = _state_bounds(data)
    psi_sup = c * float(np.max(np.abs(np.concatenate([lo, hi]))))
    worst_margin = -math.inf
    worst_ratio = 0.0
    used = 0
    for _ in range(n_pairs):
        k = int(rng.integers(part.n_intervals))
        g0, g1 = k * V.quad.n_t, (k + 1) * V.quad.n_t
        g = int(rng.integers(g0, g1))
        s = float(grid.time(g))
        x = sample_model_path(data, s, rng, grid)
        y = _perturbed(data, x, s, rng, 0.05)
        d = sup_dist(x, y, s)
        if d == 0.0:
            continue
        zs = np.stack([data.features_of_path(x, s), data.features_of_path(y, s)])
        vals = _direct(data, grid, V.cell_steps, s, zs, g1, psi, eta)[0]
        ratio = abs(vals[0] - vals[1]) / d
        bound = stability_bound(data, c, c_eta, float(grid.time(g1)) - s, psi_sup, V.sup_norm)
        worst_margin = max(worst_margin, ratio - bound)
        worst_ratio = max(worst_ratio, ratio)
        used += 1
    return CheckReport("interval_stability", used, worst_margin, 0.0, seed,
                       {"max_ratio": worst_ratio, "value_sup_norm": V.sup_norm,
                        "note": "sup norm of the fixed point taken from the tabulated value function"})


# -- monotone bracketing --------------------------------------------------------------------------


def upper_seed(data: ProblemData, eta_sup: float, delta: float) -> float:
    """Constant ``v`` with ``G v <= v`` on an interval of length ``delta`` with terminal data below ``eta_sup``."""
    c = data.constants
    return max(c.Cf * (1.0 + data.horizon), eta_sup + c.Cf * delta * math.exp(c.Clam * delta))


def check_monotone_bracket(data: ProblemData, u0=None, v0=None, n_max: int = 30, tol: float = 1e-4,
                           V: ValueFunction | None = None, quad: QuadratureSpec = QuadratureSpec(),
                           kappa_target: float = 0.39, slack: float = 1e-10) -> CheckReport:
    """Iterate ``u_{n+1} = G u_n`` and ``v_{n+1} = G v_n`` on each interval, with the
    interval's terminal data taken from ``V`` at its right knot.

    ``u0``/``v0`` are constants or arrays over the interval's (step, node)
    grid; defaults are 0 and ``upper_seed``.  Checks that ``u`` rises, ``v``
    falls, the width obeys ``1.05 kappa^n`` times the initial width, the
    bracket contains ``V`` and both ends reach ``V`` within ``tol``.
    """
    V = solve_value(data, quad, kappa_target) if V is None else V
    lift, grid, n = V.lift, V.grid, V.lift.size
    part = V.partition
    nt = V.quad.n_t
    worst_limit = 0.0
    failure = None
    widths_all = []
    for k in reversed(range(part.n_intervals)):
        g0, g1 = k * nt, (k + 1) * nt
        if g1 == grid.steps:
            eta = data.terminal_cost
        else:
            row = V.table[g1]
            eta = lambda z, row=row: lift.interpolate(row, z)[0]  # noqa: E731
        op = IntervalOperator(data, grid, lift, g0, g1, V.cell_steps, eta)
        size = (op.S + 1) * n
        delta = float(part.knots[k + 1] - part.knots[k])
        u = np.broadcast_to(np.asarray(0.0 if u0 is None else u0, dtype=float), (size,)).copy()
        v0k = upper_seed(data, float(np.max(op.eta_nodes)), delta) if v0 is None else v0
        v = np.broadcast_to(np.asarray(v0k, dtype=float), (size,)).copy()
        ref = V.table[g0:g1 + 1].ravel()
        w0 = float(np.max(v - u))
        widths = [w0]
        for it in range(1, n_max + 1):
            u1, v1 = op.apply(u), op.apply(v)
            du, dv = u1 - u, v - v1
            if failure is None and np.min(du) < -slack:
                j = int(np.argmin(du))
                failure = f"lower sequence decreased by {-du[j]:.3e} at interval {k}, iteration {it}, entry {j}"
            if failure is None and np.min(dv) < -slack:
                j = int(np.argmin(dv))
                failure = f"upper sequence increased by {-dv[j]:.3e} at interval {k}, iteration {it}, entry {j}"
            u, v = u1, v1
            w = float(np.max(v - u))
            widths.append(w)
            if failure is None and w > 1.05 * op.kappa ** it * w0 + slack:
                failure = f"width {w:.3e} above 1.05 kappa^{it} times {w0:.3e} at interval {k}"
        if failure is None and (np.max(u - ref) > tol or np.max(ref - v) > tol):
            failure = f"bracket misses the value function at interval {k}"
        worst_limit = max(worst_limit, float(np.max(np.abs(u - ref))), float(np.max(np.abs(v - ref))))
        widths_all.insert(0, {"interval": k, "kappa": op.kappa, "widths": widths})
    worst = math.inf if failure else worst_limit
    notes = {"widths": widths_all, "limit_error": worst_limit}
    if failure:
        notes["failure"] = failure
    return CheckReport("bracket", n_max, worst, tol, None, notes)


# -- characteristics ----------------------------------------------------------------------------


def _lift_along(data: ProblemData, times: np.ndarray, values: np.ndarray, z0: np.ndarray) -> np.ndarray:
    """Lifted states along a piecewise-linear path starting from lifted state ``z0``."""
    out = np.empty((len(times), len(z0)))
    out[0] = z0
    z = z0.copy()
    for j in range(1, len(times)):
        h = times[j] - times[j - 1]
        prev = z.copy()
        z[data.term_index] = values[j]
        if data.max_mask.any():
            z[data.max_mask] = np.maximum(prev[data.max_mask], values[j][data.comp_of[data.max_mask]])
        if data.int_mask.any():
            comp = data.comp_of[data.int_mask]
            z[data.int_mask] = prev[data.int_mask] + 0.5 * h * (values[j - 1][comp] + values[j][comp])
        out[j] = z
    return out


def _candidate_paths(data: ProblemData, V: ValueFunction, s0: float, x0: CadlagPath, max_schedules: int = 64):
    """Schedule-driven flows and constant-velocity paths from ``(s0, x0)``.

    Velocities have size ``C_f (1 + |x|)`` evaluated at the start and are
    clipped to the state box; both kinds stay in the admissible path class.
    """
    grid = V.grid
    g = grid.index_after(s0)
    times = np.concatenate([[s0], grid.time(np.arange(g, grid.steps + 1))])
    z0 = data.features_of_path(x0, s0)
    out = []
    cells = np.unique(grid.time(np.arange(0, grid.steps + 1, V.cell_steps)))
    cuts = cells[(cells > s0) & (cells < data.horizon)]
    scheds = enumerate_schedules(data.n_controls, len(cuts) + 1)[:max_schedules]
    for sched in scheds:
        phi = solve_flow(data, s0, x0, OpenLoopControl(tuple(float(c) for c in cuts), tuple(int(a) for a in sched)),
                         grid)
        out.append(("schedule" + "".join(str(int(a)) for a in sched), phi.times, phi.values, phi.lifted))
    lo, hi = _state_bounds(data)
    cur = data.state_of(z0)
    speed = data.constants.Cf * (1.0 + float(np.max(np.abs(cur))))
    dirs = [np.zeros(data.dimension)]
    for i in range(data.dimension):
        for sgn in (1.0, -1.0):
            e = np.zeros(data.dimension)
            e[i] = sgn
            dirs.append(e)
    for e in dirs:
        vals = np.clip(cur[None, :] + speed * (times - s0)[:, None] * e[None, :], lo, hi)
        out.append((f"velocity{e.tolist()}", times, vals, _lift_along(data, times, vals, z0)))
    return out


def characteristic_y(data: ProblemData, V: ValueFunction, times, values, lifted, y0: float, p) -> np.ndarray:
    """Heun integration of ``y' = <x', p> - F_V(t, x, y, p)`` along a piecewise-linear path."""
    p = np.asarray(p, dtype=float)
    y = np.empty(len(times))
    y[0] = y0

    def rhs(j, yy, vel):
        return float(vel @ p - hamiltonian_lifted(data, V, times[j], lifted[j][None, :], yy, p)[0])

    for j in range(len(times) - 1):
        h = times[j + 1] - times[j]
        vel = (values[j + 1] - values[j]) / h
        k1 = rhs(j, y[j], vel)
        k2 = rhs(j + 1, y[j] + h * k1, vel)
        y[j + 1] = y[j] + 0.5 * h * (k1 + k2)
    return y


def check_minimax_along_characteristics(data: ProblemData, V: ValueFunction, s0: float, x0: CadlagPath,
                                        z_grid, tol: float) -> CheckReport:
    """Heuristic existence search for characteristic pairs in both directions.

    For each gradient ``p`` in ``z_grid`` the search tries every candidate
    path and records the best margins of ``y - V`` along it.  A failure means
    no pair was found at this resolution, not that none exists.
    """
    y0 = V.query_path(data, s0, x0)
    cands = _candidate_paths(data, V, s0, x0)
    per = []
    worst = 0.0
    for p in z_grid:
        p = np.atleast_1d(np.asarray(p, dtype=float))
        best_super, best_sub = -math.inf, math.inf
        who_super = who_sub = None
        for name, times, values, lifted in cands:
            y = characteristic_y(data, V, times, values, lifted, y0, p)
            v = V.query(times, lifted)[0]
            gap = y - v
            if np.min(gap) > best_super:
                best_super, who_super = float(np.min(gap)), name
            if np.max(gap) < best_sub:
                best_sub, who_sub = float(np.max(gap)), name
        ok_super = best_super >= -tol
        ok_sub = best_sub <= tol
        per.append({"p": p.tolist(), "super_margin": best_super, "super_path": who_super,
                    "sub_margin": best_sub, "sub_path": who_sub,
                    "super": "found" if ok_super else "not found at this resolution",
                    "sub": "found" if ok_sub else "not found at this resolution"})
        worst = max(worst, -best_super, best_sub)
    return CheckReport("minimax", len(per), worst, tol, None,
                       {"y0": y0, "candidates": len(cands), "per_gradient": per,
                        "kind": "heuristic existence search"})


# -- flow estimates -------------------------------------------------------------------------------


def check_flow_bounds(data: ProblemData, n_pairs: int, seed: int = 0, steps: int = 128,
                      rel_slack: float = 1e-6) -> CheckReport:
    """Flow and discount stability in the initial path under random schedules.

    For pairs of model paths ``x, y`` on ``[0, s]`` and one schedule, checks at
    every flow node ``t``: ``sup_{r<=t} |phi - phi~| <= e^{L_f (t-s)} d`` and
    ``|chi - chi~| <= L_f (t-s) e^{L_f (t-s)} d`` with ``d = sup_dist(x, y, s)``.
    ``worst`` is the largest ratio of left side to bound.
    """
    rng = np.random.default_rng(seed)
    grid = TimeGrid(data.horizon, steps)
    Lf = data.constants.Lf
    worst_flow = 0.0
    worst_chi = 0.0
    used = 0
    for i in range(n_pairs):
        g = int(rng.integers(1, grid.steps))
        s = float(grid.time(g))
        x = sample_model_path(data, s, rng, grid)
        y = _perturbed(data, x, s, rng, 0.05) if i % 2 else sample_model_path(data, s, rng, grid)
        d = sup_dist(x, y, s)
        if d == 0.0:
            continue
        n_cut = int(rng.integers(0, 4))
        later = grid.times[(grid.times > s) & (grid.times < data.horizon)]
        cuts = tuple(float(c) for c in np.sort(rng.choice(later, size=min(n_cut, len(later)), replace=False)))
        labels = tuple(int(a) for a in rng.integers(data.n_controls, size=len(cuts) + 1))
        ctl = OpenLoopControl(cuts, labels)
        px, py = solve_flow(data, s, x, ctl, grid), solve_flow(data, s, y, ctl, grid)
        tau = px.times - s
        diff = np.maximum.accumulate(np.max(np.abs(px.values - py.values), axis=-1))
        diff = np.maximum(diff, d)
        flow_bound = np.exp(Lf * tau) * d
        chi_diff = np.abs(np.exp(-px.hazard) - np.exp(-py.hazard))
        chi_bound = Lf * tau * np.exp(Lf * tau) * d
        worst_flow = max(worst_flow, float(np.max(diff / flow_bound)))
        pos = chi_bound > 0
        if np.any(pos):
            worst_chi = max(worst_chi, float(np.max(chi_diff[pos] / chi_bound[pos])))
        if np.any(chi_diff[~pos] > 0):
            worst_chi = math.inf
        used += 1
    return CheckReport("flow_bounds", used, max(worst_flow, worst_chi), 1.0 + rel_slack, seed,
                       {"worst_flow_ratio": worst_flow, "worst_discount_ratio": worst_chi})


# -- regularity counterexample ------------------------------------------------------------------


def regularity_counterexample() -> CheckReport:
    """Running sup-norm functional at a path with a jump: discontinuous in the pseudo-metric's
    concatenation direction even though the time gap is tiny."""
    t0, T = 0.5, 1.0
    x0 = CadlagPath(np.array([0.0, t0, t0, T, T]), np.array([[0.0], [0.0], [-2.0], [-2.0], [0.0]]), T)

    def u(t, x):
        return sup_norm(x, t)

    results = {}
    dev = 0.0
    v = u(t0, concat(x0, t0, [-1.0]))
    results["value_at_t0"] = v
    dev = max(dev, abs(v - 1.0))
    for eps in (1e-3, 1e-6):
        v = u(t0 + eps, concat(x0, t0 + eps, [-1.0]))
        results[f"value_at_t0_plus_{eps:g}"] = v
        dev = max(dev, abs(v - 2.0))
    gaps = {}
    # n >= 4 keeps t0 + 1/n below T, where x0 returns to 0
    for n in (4, 8, 16, 64, 1024):
        gap = pseudo_metric(t0 + 1.0 / n, x0, t0, x0)
        gaps[n] = gap
        dev = max(dev, abs(gap - 1.0 / n))
    results["metric_gaps"] = gaps
    return CheckReport("regularity", 3, dev, 0.0, None, results)
