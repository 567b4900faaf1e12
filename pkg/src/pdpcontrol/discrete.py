"""Finite history-dependent decision model: marginals, policy costs, Bellman recursion.

States and controls are indexed by integers.  A history at stage ``k`` is
``(xs, us)`` with ``len(xs) == k + 1``; the kernel ``p_k`` and cost ``g_k``
read the history including the stage-``k`` control.  Costs may be
``math.inf``, which marks an infeasible history: it absorbs under addition
and loses every minimisation.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .flow import TimeGrid, rk4_step
from .model import ProblemData
from .paths import CadlagPath
from .solver import exp_trapezoid_weights

INFEASIBLE = math.inf
DEFAULT_BUDGET = 2_000_000


class BudgetExceeded(RuntimeError):
    pass


def _mul(p: float, g: float) -> float:
    # 0 * inf = 0: histories of probability zero never contribute
    return 0.0 if p == 0.0 else p * g


@dataclass
class DiscreteDecisionModel:
    states: tuple
    controls: tuple
    horizon: int  # g_k = 0 for k >= horizon
    kernel: Callable  # (k, xs, us) -> row over states
    cost: Callable  # (k, xs, us) -> nonnegative float or inf
    budget: int = DEFAULT_BUDGET
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_controls(self) -> int:
        return len(self.controls)

    def p(self, k: int, xs: tuple, us: tuple) -> np.ndarray:
        key = ("p", k, xs, us)
        if key not in self._cache:
            row = np.asarray(self.kernel(k, xs, us), dtype=float)
            if row.shape != (self.n_states,) or np.any(row < 0) or abs(row.sum() - 1.0) > 1e-12:
                raise ValueError(f"kernel row at stage {k}, history {xs, us} is not a probability row")
            self._cache[key] = row
        return self._cache[key]

    def g(self, k: int, xs: tuple, us: tuple) -> float:
        if k >= self.horizon:
            return 0.0
        key = ("g", k, xs, us)
        if key not in self._cache:
            v = float(self.cost(k, xs, us))
            if not v >= 0:
                raise ValueError(f"negative cost at stage {k}, history {xs, us}")
            self._cache[key] = v
        return self._cache[key]

    def check_budget(self, n_visited: int):
        if n_visited > self.budget:
            raise BudgetExceeded(f"{n_visited} visited histories exceed the enumeration budget {self.budget}")


# -- table-based models ------------------------------------------------------------


def _matches(pattern, tokens) -> bool:
    return len(pattern) == len(tokens) and all(p == "*" or p == t for p, t in zip(pattern, tokens))


def _history_tokens(model_states, model_controls, xs, us):
    out = []
    for i, x in enumerate(xs):
        out.append(model_states[x])
        if i < len(us):
            out.append(model_controls[us[i]])
    return out


def model_from_tables(doc: dict, budget: int = DEFAULT_BUDGET) -> DiscreteDecisionModel:
    """Model from a table document.

    ``kernel`` and ``cost`` entries carry a ``stage`` and a ``match`` list over
    the history tokens ``x0, u0, x1, u1, ..., xk, uk`` where ``*`` matches
    anything; the first matching entry wins.  Unmatched costs are 0, unmatched
    kernel rows are an error.  A cost value may be the string ``"inf"``.
    """
    states = tuple(doc["states"])
    controls = tuple(doc["controls"])
    K = int(doc["horizon"])
    kern = [(int(e["stage"]), list(e["match"]), [float(v) for v in e["row"]]) for e in doc.get("kernel", [])]
    costs = [(int(e["stage"]), list(e["match"]), float(e["value"])) for e in doc.get("cost", [])]
    for _, _, row in kern:
        if len(row) != len(states):
            raise ValueError("kernel row length differs from the number of states")

    def kernel(k, xs, us):
        toks = _history_tokens(states, controls, xs, us)
        for st, pat, row in kern:
            if st == k and _matches(pat, toks):
                return row
        raise ValueError(f"no kernel row for stage {k} history {toks}")

    def cost(k, xs, us):
        toks = _history_tokens(states, controls, xs, us)
        for st, pat, v in costs:
            if st == k and _matches(pat, toks):
                return v
        return 0.0

    return DiscreteDecisionModel(states, controls, K, kernel, cost, budget)


def load_model(text: str, budget: int = DEFAULT_BUDGET) -> DiscreteDecisionModel:
    return model_from_tables(json.loads(text), budget)


# -- policies --------------------------------------------------------------------------


@dataclass
class HistoryPolicy:
    """``rule(k, xs, us_before)`` gives a probability row over controls."""

    rule: Callable
    deterministic: bool = False

    def row(self, model: DiscreteDecisionModel, k: int, xs: tuple, us: tuple) -> np.ndarray:
        r = np.asarray(self.rule(k, xs, us), dtype=float)
        if r.shape != (model.n_controls,) or np.any(r < 0) or abs(r.sum() - 1.0) > 1e-12:
            raise ValueError(f"policy row at stage {k} is not a probability row")
        return r


def decision_points(model: DiscreteDecisionModel, x: int, n_stages: int):
    """All histories ``(xs, us)`` at which a policy chooses ``u_k``, for ``k < n_stages``, starting at ``x``."""
    pts = []
    for k in range(n_stages):
        for tail in itertools.product(range(model.n_states), repeat=k):
            for us in itertools.product(range(model.n_controls), repeat=k):
                pts.append((k, (x,) + tail, us))
    return pts


def table_policy(table: dict, n_controls: int, deterministic: bool) -> HistoryPolicy:
    def rule(k, xs, us):
        v = table.get((k, xs, us))
        if v is None:
            return np.full(n_controls, 1.0 / n_controls)
        if deterministic:
            r = np.zeros(n_controls)
            r[v] = 1.0
            return r
        return v

    return HistoryPolicy(rule, deterministic)


def random_policy(model: DiscreteDecisionModel, x: int, rng: np.random.Generator, n_stages: int | None = None) -> HistoryPolicy:
    n = model.horizon if n_stages is None else n_stages
    table = {pt: rng.dirichlet(np.ones(model.n_controls)) for pt in decision_points(model, x, n)}
    return table_policy(table, model.n_controls, False)


def mixture_at_first_stage(p1: HistoryPolicy, p2: HistoryPolicy, alpha: float, model: DiscreteDecisionModel,
                           x: int) -> HistoryPolicy:
    """Play ``p1`` with probability ``alpha`` and ``p2`` otherwise; needs deterministic
    policies whose first controls at ``x`` differ, so later stages can tell them apart."""
    u1 = int(np.argmax(p1.row(model, 0, (x,), ())))
    u2 = int(np.argmax(p2.row(model, 0, (x,), ())))
    if u1 == u2:
        raise ValueError("policies must choose different first controls")

    def rule(k, xs, us):
        if k == 0:
            r = np.zeros(model.n_controls)
            r[u1] += alpha
            r[u2] += 1.0 - alpha
            return r
        return (p1 if us[0] == u1 else p2).rule(k, xs, us)

    return HistoryPolicy(rule, False)


# -- marginals and costs ---------------------------------------------------------------------


def rollout_marginal(model: DiscreteDecisionModel, pi: HistoryPolicy, p0, N: int) -> dict:
    """Marginal law of ``(x_0, u_0, ..., x_{N-1}, u_{N-1})`` as ``{(xs, us): mass}`` (positive masses only)."""
    if N < 1:
        raise ValueError("N must be positive")
    p0 = np.asarray(p0, dtype=float)
    cur = {}
    for x0 in range(model.n_states):
        if p0[x0] == 0:
            continue
        mu = pi.row(model, 0, (x0,), ())
        for u0 in range(model.n_controls):
            if mu[u0] > 0:
                cur[((x0,), (u0,))] = p0[x0] * mu[u0]
    for k in range(1, N):
        nxt = {}
        for (xs, us), m in cur.items():
            row = model.p(k - 1, xs, us)
            for w in range(model.n_states):
                if row[w] == 0:
                    continue
                xs2 = xs + (w,)
                mu = pi.row(model, k, xs2, us)
                for u in range(model.n_controls):
                    if mu[u] > 0:
                        nxt[(xs2, us + (u,))] = m * row[w] * mu[u]
        model.check_budget(len(nxt))
        cur = nxt
    return cur


def policy_cost(model: DiscreteDecisionModel, pi: HistoryPolicy, x: int) -> float:
    """``sum_k E[g_k]`` under ``pi`` from ``x``."""
    p0 = np.zeros(model.n_states)
    p0[x] = 1.0
    total = 0.0
    cur = rollout_marginal(model, pi, p0, 1)
    for k in range(model.horizon):
        for (xs, us), m in cur.items():
            total += _mul(m, model.g(k, xs, us))
        if k + 1 < model.horizon:
            nxt = {}
            for (xs, us), m in cur.items():
                row = model.p(k, xs, us)
                for w in range(model.n_states):
                    if row[w] == 0:
                        continue
                    mu = pi.row(model, k + 1, xs + (w,), us)
                    for u in range(model.n_controls):
                        if mu[u] > 0:
                            nxt[(xs + (w,), us + (u,))] = m * row[w] * mu[u]
            model.check_budget(len(nxt))
            cur = nxt
    return total


def tail_cost(model: DiscreteDecisionModel, k: int, xs: tuple, us: tuple, memo: dict | None = None) -> float:
    """Optimal cost-to-go ``J*(k; x_0..x_k; u_0..u_{k-1})`` by backward induction."""
    memo = {} if memo is None else memo
    if k >= model.horizon:
        return 0.0
    key = (k, xs, us)
    if key in memo:
        return memo[key]
    best = INFEASIBLE
    for u in range(model.n_controls):
        val = q_value(model, k, xs, us, u, memo)
        if val < best:
            best = val
    memo[key] = best
    model.check_budget(len(memo))
    return best


def q_value(model: DiscreteDecisionModel, k: int, xs: tuple, us: tuple, u: int, memo: dict | None = None) -> float:
    """``g_k + sum_w p_k(w) J*(k+1; ..., w)`` for the control ``u``."""
    memo = {} if memo is None else memo
    us2 = us + (u,)
    val = model.g(k, xs, us2)
    if k + 1 < model.horizon:
        row = model.p(k, xs, us2)
        for w in range(model.n_states):
            if row[w] > 0:
                val += _mul(row[w], tail_cost(model, k + 1, xs + (w,), us2, memo))
    return val


def optimal_cost(model: DiscreteDecisionModel, x: int) -> float:
    return tail_cost(model, 0, (x,), ())


def bellman_policy(model: DiscreteDecisionModel, x: int) -> HistoryPolicy:
    """Deterministic policy choosing the lowest-index minimiser of the one-step Bellman values."""
    memo = {}
    table = {}
    for k, xs, us in decision_points(model, x, model.horizon):
        vals = [q_value(model, k, xs, us, u, memo) for u in range(model.n_controls)]
        table[(k, xs, us)] = int(np.argmin(vals))
    return table_policy(table, model.n_controls, True)


def enumerate_deterministic(model: DiscreteDecisionModel, x: int, limit: int = 1 << 16):
    """Costs of all deterministic history policies from ``x`` (minimum and count)."""
    pts = decision_points(model, x, model.horizon)
    n = model.n_controls ** len(pts)
    if n > limit:
        raise BudgetExceeded(f"{n} deterministic policies exceed the enumeration limit {limit}")
    best = INFEASIBLE
    costs = []
    for choice in itertools.product(range(model.n_controls), repeat=len(pts)):
        pi = table_policy(dict(zip(pts, choice)), model.n_controls, True)
        c = policy_cost(model, pi, x)
        costs.append(c)
        best = min(best, c)
    return best, np.array(costs)


@dataclass
class SufficiencyReport:
    optimal: float
    best_deterministic: float
    worst_margin: float  # min over sampled policies of cost - optimal
    n_policies: int
    seed: int
    mixture_gap: float
    passed: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def check_nonrandomized_sufficiency(model: DiscreteDecisionModel, x: int, n_random_policies: int, seed: int) -> SufficiencyReport:
    rng = np.random.default_rng(seed)
    jstar = optimal_cost(model, x)
    best_det = policy_cost(model, bellman_policy(model, x), x)
    margins = [policy_cost(model, random_policy(model, x, rng), x) - jstar for _ in range(n_random_policies)]
    worst = float(min(margins)) if margins else math.inf
    # mixture of the Bellman policy with one that starts differently
    gap = 0.0
    pts = decision_points(model, x, model.horizon)
    base = bellman_policy(model, x)
    u0 = int(np.argmax(base.row(model, 0, (x,), ())))
    if model.n_controls > 1:
        alt_choice = {pt: int(rng.integers(model.n_controls)) for pt in pts}
        alt_choice[(0, (x,), ())] = (u0 + 1) % model.n_controls
        alt = table_policy(alt_choice, model.n_controls, True)
        a = 0.3
        mix = mixture_at_first_stage(base, alt, a, model, x)
        gap = abs(policy_cost(model, mix, x) - (a * policy_cost(model, base, x) + (1 - a) * policy_cost(model, alt, x)))
    passed = worst >= -1e-10 and abs(best_det - jstar) <= 1e-12 and gap <= 1e-12
    return SufficiencyReport(jstar, best_det, worst, n_random_policies, seed, gap, passed)


# -- bridge from the continuous-time model -----------------------------------------------------


@dataclass
class BridgeInfo:
    times: np.ndarray
    marks: np.ndarray
    stage_cap: int


def bridge_from_pdp(data: ProblemData, s: float, x: CadlagPath, stage_cap: int, n_times: int = 3,
                    substeps: int = 16, budget: int = DEFAULT_BUDGET):
    """Discrete decision model whose stages are the jumps of the continuous-time process.

    Jump times are pushed to the next node of a coarse grid of ``n_times``
    intervals on ``[s, T]``; marks are the kernel atoms.  A state is a
    (jump time, mark) pair or the cemetery (no further jump before ``T``);
    a control is a constant label for the stage or the cemetery control.
    The stage cost is the expected cost until the next jump,
    ``int chi ell + chi(T) h``; a non-cemetery state with the cemetery
    control, or the reverse, costs ``inf``.
    """
    T = data.horizon
    coarse = s + (T - s) * np.arange(n_times + 1) / n_times
    nc = data.n_controls
    # candidate marks: atoms evaluated at lifted nodes along all histories are
    # discovered lazily and registered in this list
    marks: list = []
    state_of: dict = {}

    def state_index(i, e):
        key = (i, tuple(np.round(e, 12)))
        if key not in state_of:
            raise KeyError(key)
        return state_of[key]

    # Enumerate reachable (time index, mark) pairs up front by a forward sweep.
    z_start = data.features_of_path(x, s)

    seg_cache: dict = {}

    def flow_segment(i0, z, a):
        """Lifted states at coarse nodes after ``i0`` and stage quadrature data."""
        key = (i0, z.tobytes(), a)
        if key in seg_cache:
            return seg_cache[key]
        out = {}
        chi = 1.0
        run = 0.0
        zc = z[None, :]
        lab = np.array([a])
        for i in range(i0, n_times):
            t0c, t1c = coarse[i], coarse[i + 1]
            for m in range(substeps):
                t0 = t0c + (t1c - t0c) * m / substeps
                t1 = t0c + (t1c - t0c) * (m + 1) / substeps
                z1 = rk4_step(data, t0, t1, zc, lab)
                wa, wb, _, decay = exp_trapezoid_weights(data.intensity(t0, zc, lab), data.intensity(t1, z1, lab), t1 - t0)
                run += chi * (wa[0] * data.running_cost(t0, zc, lab)[0] + wb[0] * data.running_cost(t1, z1, lab)[0])
                chi *= float(decay[0])
                zc = z1
            out[i + 1] = (zc[0].copy(), chi, run)
        seg_cache[key] = out
        return out

    # reachable states
    seen_states = {}
    frontier = [(0, z_start, 0)]
    while frontier:
        i0, z, depth = frontier.pop()
        if depth >= stage_cap or i0 >= n_times:
            continue
        for a in range(nc):
            seg = flow_segment(i0, z, a)
            for i, (zi, _, _) in seg.items():
                mk, q = data.kernel(coarse[i], zi[None, :], np.array([a]))
                for e, w in zip(mk[0], q[0]):
                    if w <= 0:
                        continue
                    key = (i, tuple(np.round(e, 12)))
                    if key not in seen_states:
                        seen_states[key] = len(seen_states)
                        marks.append((i, np.array(e)))
                    frontier.append((i, data.reset(zi[None, :], e[None, :])[0], depth + 1))
    states = ["start"] + [f"t{i}:{tuple(np.round(e, 6))}" for i, e in marks] + ["cemetery"]
    state_of.update({k: v + 1 for k, v in seen_states.items()})
    n_states = len(states)
    cem = n_states - 1
    controls = list(data.controls) + ["cemetery"]
    cem_u = nc

    z_cache = {}

    def lifted(xs, us):
        """Lifted state right after the last jump in the history and its time index."""
        key = (xs, us)
        if key in z_cache:
            return z_cache[key]
        if len(xs) == 1:
            res = (0, z_start)
        else:
            i_prev, z_prev = lifted(xs[:-1], us[:-1])
            i, e = marks[xs[-1] - 1]
            zi = flow_segment(i_prev, z_prev, us[-1])[i][0]
            res = (i, data.reset(zi[None, :], e[None, :])[0])
        z_cache[key] = res
        return res

    def kernel(k, xs, us):
        row = np.zeros(n_states)
        if xs[-1] == cem or us[-1] == cem_u:
            row[cem] = 1.0
            return row
        i0, z = lifted(xs, us[:-1])
        a = us[-1]
        seg = flow_segment(i0, z, a)
        prev = 1.0
        for i in range(i0 + 1, n_times + 1):
            zi, chi, _ = seg[i]
            mk, q = data.kernel(coarse[i], zi[None, :], np.array([a]))
            for e, w in zip(mk[0], q[0]):
                if w > 0:
                    row[state_index(i, e)] += (prev - chi) * w
            prev = chi
        row[cem] += prev
        return row / row.sum()

    def cost(k, xs, us):
        is_cem = xs[-1] == cem
        if is_cem != (us[-1] == cem_u):
            return INFEASIBLE
        if is_cem:
            return 0.0
        i0, z = lifted(xs, us[:-1])
        if i0 >= n_times:
            return float(data.terminal_cost(z[None, :])[0])
        seg = flow_segment(i0, z, us[-1])
        zT, chi, run = seg[n_times]
        return run + chi * float(data.terminal_cost(zT[None, :])[0])

    model = DiscreteDecisionModel(tuple(states), tuple(controls), stage_cap + 1, kernel, cost, budget)
    return model, BridgeInfo(coarse, np.array([e for _, e in marks]) if marks else np.zeros((0, data.dimension)),
                             stage_cap)
