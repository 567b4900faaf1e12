import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdpcontrol.builtins import TWO_STAGE_MDP, builtin_problem
from pdpcontrol.discrete import (
    BudgetExceeded,
    DiscreteDecisionModel,
    HistoryPolicy,
    bellman_policy,
    bridge_from_pdp,
    check_nonrandomized_sufficiency,
    enumerate_deterministic,
    load_model,
    mixture_at_first_stage,
    optimal_cost,
    policy_cost,
    q_value,
    random_policy,
    rollout_marginal,
    table_policy,
)
from pdpcontrol.paths import CadlagPath


def two_stage():
    return load_model(json.dumps(TWO_STAGE_MDP))


def markov_model(P, c, horizon):
    """History-free model: rows ``P[u][x]`` and costs ``c[x][u]``."""
    P, c = np.asarray(P), np.asarray(c)
    return DiscreteDecisionModel((0, 1), (0, 1), horizon, lambda k, xs, us: P[us[-1]][xs[-1]],
                                 lambda k, xs, us: c[xs[-1]][us[-1]])


def markov_policy(M):
    """Stationary policy with row ``M[x]``."""
    return HistoryPolicy(lambda k, xs, us: M[xs[-1]])


def brute_force_cost(model, pi, x):
    """Sum over every full path of probability times total cost."""
    K, total = model.horizon, 0.0
    for us in itertools.product(range(model.n_controls), repeat=K):
        for tail in itertools.product(range(model.n_states), repeat=K - 1):
            xs = (x,) + tail
            prob, cost = 1.0, 0.0
            for k in range(K):
                prob *= pi.row(model, k, xs[:k + 1], us[:k])[us[k]]
                if k > 0:
                    prob *= model.p(k - 1, xs[:k], us[:k])[xs[k]]
                if prob == 0:
                    break
                cost += model.g(k, xs[:k + 1], us[:k + 1])
            if prob:
                total += prob * cost
    return total


def test_uniform_histories():
    m = markov_model([[[0.5, 0.5]] * 2] * 2, [[0, 0], [0, 0]], 2)
    pi = markov_policy([[0.5, 0.5], [0.5, 0.5]])
    law = rollout_marginal(m, pi, [0.5, 0.5], 2)
    assert len(law) == 16
    assert all(v == pytest.approx(1 / 16, abs=1e-15) for v in law.values())


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_markov_marginal_matches_matrix_powers(seed):
    r = np.random.default_rng(seed)
    P = r.dirichlet(np.ones(2), size=(2, 2))
    M = r.dirichlet(np.ones(2), size=2)
    m = markov_model(P, np.zeros((2, 2)), 4)
    p0 = r.dirichlet(np.ones(2))
    law = rollout_marginal(m, markov_policy(M), p0, 4)
    # state chain under the policy: Q[x, y] = sum_u M[x, u] P[u, x, y]
    Q = np.einsum("xu,uxy->xy", M, P)
    last = np.zeros(2)
    for (xs, us), v in law.items():
        last[xs[-1]] += v
    assert np.allclose(last, p0 @ np.linalg.matrix_power(Q, 3), atol=1e-12)
    assert sum(law.values()) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 1))
def test_policy_cost_matches_path_sum(seed, x):
    m = two_stage()
    pi = random_policy(m, x, np.random.default_rng(seed))
    assert policy_cost(m, pi, x) == pytest.approx(brute_force_cost(m, pi, x), abs=1e-12)


def test_marginals_project_consistently():
    m = two_stage()
    pi = random_policy(m, 0, np.random.default_rng(3), n_stages=3)
    m3 = load_model(json.dumps({**TWO_STAGE_MDP, "kernel": TWO_STAGE_MDP["kernel"] + [
        {"stage": 2, "match": ["*"] * 6, "row": [0.5, 0.5]}]}))
    p0 = [1.0, 0.0]
    short = rollout_marginal(m3, pi, p0, 2)
    long = rollout_marginal(m3, pi, p0, 3)
    proj = {}
    for (xs, us), v in long.items():
        key = (xs[:2], us[:2])
        proj[key] = proj.get(key, 0.0) + v
    assert set(proj) == set(short)
    assert all(proj[k] == pytest.approx(short[k], abs=1e-14) for k in short)


def test_optimal_cost_matches_enumeration():
    m = two_stage()
    for x, expected in ((0, 1.54), (1, 1.28)):
        best, costs = enumerate_deterministic(m, x)
        assert len(costs) == 32
        assert abs(optimal_cost(m, x) - best) <= 1e-12
        assert optimal_cost(m, x) == pytest.approx(expected, abs=1e-12)


def test_bellman_identity():
    m = two_stage()
    memo = {}
    for x in range(2):
        qs = [q_value(m, 0, (x,), (), u, memo) for u in range(2)]
        assert optimal_cost(m, x) == pytest.approx(min(qs), abs=1e-12)
        assert policy_cost(m, bellman_policy(m, x), x) == pytest.approx(min(qs), abs=1e-12)


def test_mixture_is_linear():
    m = two_stage()
    p1 = table_policy({(0, (0,), ()): 0}, 2, True)
    p2 = table_policy({(0, (0,), ()): 1}, 2, True)
    for a in (0.0, 0.25, 1.0):
        mix = mixture_at_first_stage(p1, p2, a, m, 0)
        want = a * policy_cost(m, p1, 0) + (1 - a) * policy_cost(m, p2, 0)
        assert policy_cost(m, mix, 0) == pytest.approx(want, abs=1e-12)
    with pytest.raises(ValueError):
        mixture_at_first_stage(p1, p1, 0.5, m, 0)


def test_sufficiency_report():
    rep = check_nonrandomized_sufficiency(two_stage(), 0, 200, 7)
    assert rep.passed and rep.worst_margin >= -1e-10 and rep.n_policies == 200


def test_infinite_cost_on_null_history_is_ignored():
    P = [[[1.0, 0.0], [0.0, 1.0]]] * 2
    m = DiscreteDecisionModel((0, 1), (0, 1), 2, lambda k, xs, us: P[us[-1]][xs[-1]],
                              lambda k, xs, us: math.inf if xs[-1] == 1 else 1.0)
    assert optimal_cost(m, 0) == 2.0
    assert optimal_cost(m, 1) == math.inf


def test_validation_and_budget():
    bad = DiscreteDecisionModel((0, 1), (0,), 1, lambda k, xs, us: [0.5, 0.6], lambda k, xs, us: 0.0)
    with pytest.raises(ValueError):
        bad.p(0, (0,), (0,))
    neg = DiscreteDecisionModel((0, 1), (0,), 1, lambda k, xs, us: [0.5, 0.5], lambda k, xs, us: -1.0)
    with pytest.raises(ValueError):
        neg.g(0, (0,), (0,))
    tiny = load_model(json.dumps(TWO_STAGE_MDP), budget=3)
    with pytest.raises(BudgetExceeded):
        optimal_cost(tiny, 0)


def test_bridge_constant_terminal_is_exact():
    d = builtin_problem("constant_terminal")
    model, info = bridge_from_pdp(d, 0.0, CadlagPath.constant(0.5, 1.0), stage_cap=3, n_times=2)
    assert optimal_cost(model, 0) == pytest.approx(3.0, abs=1e-12)
    assert info.stage_cap == 3


def test_bridge_unit_running_gap_shrinks():
    # jumps are delayed to the next coarse node, which loses running cost at
    # the horizon; the gap to T - s = 1 shrinks as the grid is refined
    d = builtin_problem("unit_running")
    vals = []
    for n in (2, 3):
        model, _ = bridge_from_pdp(d, 0.0, CadlagPath.constant(0.5, 1.0), stage_cap=3, n_times=n)
        vals.append(optimal_cost(model, 0))
    assert vals[0] < vals[1] < 1.0
