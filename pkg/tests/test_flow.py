import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdpcontrol.builtins import builtin_document
from pdpcontrol.flow import (
    OpenLoopControl,
    TimeGrid,
    integrated_hazard,
    sample_next_jump,
    solve_flow,
    survival_and_discount,
)
from pdpcontrol.model import ModelError, problem_from_document
from pdpcontrol.paths import CadlagPath, eval_path


def decay_problem(intensity="1 + t"):
    doc = builtin_document("constant_terminal")
    doc.update(drift=["-feat[0]"], intensity=intensity,
               lift=[{"kind": "terminal_value", "component": 0, "lower": 0, "upper": 1, "nodes": 3}])
    doc["constants"].update(Lf=1.0, Clam=2.0)
    return problem_from_document(doc)


ONLY = OpenLoopControl.constant("only")


def test_exponential_decay_matches_closed_form():
    d = decay_problem()
    x = CadlagPath.constant(1.0, 1.0)
    phi = solve_flow(d, 0.0, x, ONLY, 1.0 / 64)
    y = phi.path()
    for t in (0.25, 0.5, 1.0):
        assert eval_path(y, t)[0] == pytest.approx(math.exp(-t), abs=1e-9)


def test_flow_from_off_grid_start_keeps_history():
    d = decay_problem()
    x = CadlagPath(np.array([0.0, 0.3]), np.array([[0.0], [0.6]]), 1.0)
    phi = solve_flow(d, 0.3, x, ONLY, 0.1)
    y = phi.path()
    assert eval_path(y, 0.15)[0] == pytest.approx(0.3)
    assert eval_path(y, 0.8)[0] == pytest.approx(0.6 * math.exp(-0.5), abs=1e-6)  # RK4 at h = 0.1
    assert phi.times[1] == pytest.approx(0.4)


def test_linear_intensity_hazard_is_exact():
    d = decay_problem()
    phi = solve_flow(d, 0.0, CadlagPath.constant(1.0, 1.0), ONLY, 0.1)
    for s, t in ((0.0, 1.0), (0.13, 0.77), (0.5, 0.5)):
        exact = (t - s) + (t * t - s * s) / 2
        assert integrated_hazard(d, phi, s, t) == pytest.approx(exact, abs=1e-12)
    surv, disc = survival_and_discount(d, phi, 0.0, 1.0)
    assert surv == disc == pytest.approx(math.exp(-1.5))
    with pytest.raises(ModelError):
        integrated_hazard(d, phi, 0.6, 0.2)


def test_next_jump_inverts_hazard():
    d = decay_problem("2")
    phi = solve_flow(d, 0.0, CadlagPath.constant(1.0, 1.0), ONLY, 1.0 / 32)
    # constant rate 2: tau = -log(u) / 2
    for u in (0.9, 0.5, 0.2):
        assert sample_next_jump(d, phi, 0.0, u) == pytest.approx(-math.log(u) / 2, abs=1e-9)
    assert sample_next_jump(d, phi, 0.0, 0.1) is None  # needs hazard 2.30 > 2


def test_breakpoints_must_be_grid_times():
    d = problem_from_document(builtin_document("two_control_markov"))
    x = CadlagPath.constant(0.5, 1.0)
    ok = OpenLoopControl((0.5,), ("hold", "drive"))
    phi = solve_flow(d, 0.0, x, ok, 0.25)
    assert eval_path(phi.path(), 0.5)[0] == pytest.approx(0.5)
    assert eval_path(phi.path(), 1.0)[0] == pytest.approx(0.5 * math.exp(-0.5), abs=1e-5)
    with pytest.raises(ModelError):
        solve_flow(d, 0.0, x, OpenLoopControl((0.3,), ("hold", "drive")), 0.25)
    with pytest.raises(ValueError):
        OpenLoopControl((0.5, 0.2), ("hold", "drive", "hold"))


def test_grid_indices():
    g = TimeGrid(1.0, 10)
    assert g.index_after(0.3) == 4 and g.index_after(0.35) == 4
    assert g.index_of(g.time(7)) == 7 and g.index_of(0.35) is None
    assert TimeGrid.from_dt(1.0, 0.3).steps == 4


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 0.9), st.floats(1e-6, 1.0 - 1e-6))
def test_jump_time_hits_target_hazard(s, u):
    d = decay_problem()
    phi = solve_flow(d, s, CadlagPath.constant(1.0, 1.0), ONLY, 0.05)
    tau = sample_next_jump(d, phi, s, u)
    target = -math.log(u)
    if tau is None:
        assert integrated_hazard(d, phi, s, 1.0) < target
    else:
        assert tau >= s
        assert integrated_hazard(d, phi, s, tau) == pytest.approx(target, abs=1e-8)
