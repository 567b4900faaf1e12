import math

import numpy as np
import pytest

from pdpcontrol.builtins import builtin_document, builtin_problem
from pdpcontrol.flow import TimeGrid
from pdpcontrol.model import problem_from_document
from pdpcontrol.paths import CadlagPath, eval_path
from pdpcontrol.simulator import (
    CellSchedulePolicy,
    ConstantPolicy,
    RunawayError,
    estimate_cost,
    pathwise_cost,
    replay_path,
    simulate_trajectory,
    stage_cost_decomposition,
)

GRID = TimeGrid(1.0, 64)
X05 = CadlagPath.constant(0.5, 1.0)


def drive_mean():
    # m' = 1/4 - 3m/2 from m(0) = 1/2; cost 0.3 + int m + m(1)
    c = 1.0 / 3.0
    return 0.3 + 1.0 / 6.0 + c * (1 - math.exp(-1.5)) / 1.5 + 1.0 / 6.0 + c * math.exp(-1.5)


def test_constant_terminal_cost_is_exact():
    d = builtin_problem("constant_terminal")
    res = estimate_cost(d, 0.0, X05, ConstantPolicy(0), 5000, 1, GRID)
    assert np.all(res.costs == 3.0)
    assert res.std_error == 0.0


def test_unit_running_cost_is_exact():
    d = builtin_problem("unit_running")
    res = estimate_cost(d, 0.25, X05, ConstantPolicy(0), 2000, 1, GRID)
    assert np.max(np.abs(res.costs - 0.75)) < 1e-12


@pytest.mark.parametrize("label, expected", [(0, 1.0), (1, drive_mean())])
def test_two_control_constant_policies_match_mean_ode(label, expected):
    d = builtin_problem("two_control_markov")
    res = estimate_cost(d, 0.0, X05, ConstantPolicy(label), 100_000, 11, GRID)
    assert abs(res.mean - expected) <= 3 * res.std_error + 1e-4


def test_trajectory_records_are_consistent():
    d = builtin_problem("running_max_pathdep")
    pol = CellSchedulePolicy((0, 1, 1, 0), GRID, cell_steps=16)
    for rep in range(20):
        tr = simulate_trajectory(d, 0.0, CadlagPath.constant(0.2, 1.0), pol, 5, GRID, rep=rep)
        assert pathwise_cost(d, tr) == pytest.approx(tr.cost, abs=1e-12)
        parts = stage_cost_decomposition(d, tr)
        assert len(parts) == tr.marked.n_jumps + 1
        assert sum(parts) == pytest.approx(tr.cost, abs=1e-12)
        assert np.allclose(parts, tr.stage_costs, atol=1e-12)
        again = replay_path(d, tr, GRID)
        for t in np.linspace(0, 1, 33):
            assert eval_path(again, t) == pytest.approx(eval_path(tr.path, t), abs=1e-9)


def test_trajectory_matches_batch_replication():
    d = builtin_problem("two_control_markov")
    res = estimate_cost(d, 0.0, X05, ConstantPolicy(1), 8, 3, GRID)
    for rep in range(8):
        tr = simulate_trajectory(d, 0.0, X05, ConstantPolicy(1), 3, GRID, rep=rep, crn=False)
        assert tr.cost == res.costs[rep]
        assert tr.marked.n_jumps == res.jump_counts[rep]


def test_chunk_and_thread_invariance():
    d = builtin_problem("running_max_pathdep")
    pol = ConstantPolicy(1)
    a = estimate_cost(d, 0.0, X05, pol, 3000, 9, GRID)
    b = estimate_cost(d, 0.0, X05, pol, 3000, 9, GRID, threads=4, chunk=257)
    assert np.array_equal(a.costs, b.costs) and a.mean == b.mean


def test_common_random_numbers_share_streams():
    d = builtin_problem("poisson_rate_two")
    a = estimate_cost(d, 0.0, X05, ConstantPolicy(0, name="p"), 500, 4, GRID, crn=True)
    b = estimate_cost(d, 0.0, X05, ConstantPolicy(0, name="q"), 500, 4, GRID, crn=True)
    c = estimate_cost(d, 0.0, X05, ConstantPolicy(0, name="q"), 500, 4, GRID, crn=False)
    assert np.array_equal(a.costs, b.costs)
    assert not np.array_equal(a.costs, c.costs)


def test_runaway_reports_partial_statistics():
    doc = builtin_document("constant_terminal")
    doc["intensity"] = "50"
    doc["constants"]["Clam"] = 50.0
    d = problem_from_document(doc)
    with pytest.raises(RunawayError) as err:
        estimate_cost(d, 0.0, X05, ConstantPolicy(0), 100, 1, GRID, stage_cap=5)
    assert err.value.partial["replications"] == 100


def test_bad_start_rejected():
    d = builtin_problem("constant_terminal")
    with pytest.raises(ValueError):
        estimate_cost(d, 1.0, X05, ConstantPolicy(0), 10, 1, GRID)
    with pytest.raises(ValueError):
        estimate_cost(d, 0.0, X05, ConstantPolicy(0), 1, 1, GRID)
