import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from pdpcontrol.builtins import builtin_problem
from pdpcontrol.flow import TimeGrid
from pdpcontrol.solver import (
    LiftGrid,
    QuadratureSpec,
    ValueFileError,
    apply_interval_G,
    enumerate_schedules,
    exp_trapezoid_weights,
    extract_policy,
    read_value_file,
    solve_value,
    write_value_file,
)

from conftest import single_control, solved


def hold_value(x):
    # m = 1/2 + (x - 1/2) e^{-t}; int_0^1 m + m(1)
    return x + 0.5


def drive_value(x):
    e = math.exp(-1.5)
    return 0.3 + 1 / 6 + (x - 1 / 6) * (1 - e) / 1.5 + 1 / 6 + (x - 1 / 6) * e


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 5.0), st.floats(0.0, 5.0), st.floats(0.01, 0.5), st.floats(-2, 2), st.floats(-2, 2))
def test_exp_trapezoid_weights_against_quad(lam_l, lam_r, h, g0, g1):
    a, b, lam, decay = exp_trapezoid_weights(np.array(lam_l), np.array(lam_r), h)
    lam_bar = 0.5 * (lam_l + lam_r)
    ref, _ = integrate.quad(lambda u: math.exp(-lam_bar * u) * (g0 + (g1 - g0) * u / h), 0, h, epsabs=1e-14)
    assert float(a * g0 + b * g1) == pytest.approx(ref, abs=1e-12)
    assert float(decay) == pytest.approx(math.exp(-lam_bar * h), rel=1e-14)


def test_constant_problems_are_exact():
    # both are resolved exactly by the quadrature; what remains is the
    # fixed-point stopping rule (tol_fix = 1e-6)
    d, V = solved("constant_terminal")
    assert np.max(np.abs(V.table - 3.0)) < 1e-6
    d, V = solved("unit_running")
    t = V.grid.times
    assert np.max(np.abs(V.table - (1.0 - t)[:, None])) < 1e-6


@pytest.mark.parametrize("label, oracle", [("hold", hold_value), ("drive", drive_value)])
def test_single_control_value_matches_closed_form(label, oracle):
    d = single_control("two_control_markov", label)
    V = solve_value(d, QuadratureSpec(32))
    for x in (0.0, 0.2, 0.5, 0.9, 1.0):
        assert V.query(0.0, np.array([[x]]))[0][0] == pytest.approx(oracle(x), abs=1e-3)


def test_optimal_value_below_each_constant_control():
    d, V = solved("two_control_markov")
    for x in np.linspace(0, 1, 11):
        v = V.query(0.0, np.array([[x]]))[0][0]
        assert v <= min(hold_value(x), drive_value(x)) + 1e-3


def _interval_setup(name="two_control_markov", n_t=8):
    d = builtin_problem(name)
    grid = TimeGrid(d.horizon, n_t)
    lift = LiftGrid(d)
    return d, grid, lift, QuadratureSpec(n_t)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 2.0))
def test_interval_operator_is_monotone(seed, c):
    d, grid, lift, quad = _interval_setup()
    r = np.random.default_rng(seed)
    psi = r.uniform(0, 2, (grid.steps + 1, lift.size))
    bump = psi + c * r.uniform(0, 1, psi.shape)
    lo = apply_interval_G(d, None, 0, grid.steps, psi, grid, quad, terminal=True)
    hi = apply_interval_G(d, None, 0, grid.steps, bump, grid, quad, terminal=True)
    assert np.all(lo <= hi + 1e-12)


def test_constant_shift_is_discounted_exactly():
    d = single_control("two_control_markov", "hold")  # rate 1 at all states
    grid, lift, quad = TimeGrid(1.0, 8), LiftGrid(d), QuadratureSpec(8)
    psi = np.zeros((grid.steps + 1, lift.size))
    base = apply_interval_G(d, None, 0, grid.steps, psi, grid, quad, terminal=True)
    up = apply_interval_G(d, None, 0, grid.steps, psi + 0.7, grid, quad, terminal=True)
    expected = 0.7 * (1 - np.exp(-(1.0 - grid.times)))
    assert np.max(np.abs((up - base) - expected[:, None])) < 1e-12


def test_enumerate_schedules():
    s = enumerate_schedules(2, 3)
    assert s.shape == (8, 3)
    assert len({tuple(r) for r in s}) == 8


def test_value_file_roundtrip(tmp_path):
    d, V = solved("two_control_markov")
    f = tmp_path / "v.bin"
    write_value_file(f, V, d.problem_hash(), "0.1.0")
    W, h = read_value_file(f, d)
    assert h == d.problem_hash()
    assert np.array_equal(W.table, V.table) and np.array_equal(W.q_table, V.q_table)
    assert W.cell_steps == V.cell_steps
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"XXXX" + f.read_bytes()[4:])
    with pytest.raises(ValueFileError):
        read_value_file(bad, d)
    with pytest.raises(ValueFileError):
        read_value_file(f, builtin_problem("running_max_pathdep"))


def test_extracted_policy_prefers_cheaper_label():
    d, V = solved("two_control_markov")
    pol = extract_policy(d, V)
    z = np.linspace(0, 1, 21)[:, None]
    lab = pol.decide(np.zeros(21, dtype=int), np.zeros(21), z)
    q = V.label_values(np.zeros(21), z)
    assert np.array_equal(lab, np.argmin(q, axis=-1))
    # holding is free, so it wins at x = 0
    assert lab[0] == 0
    with pytest.raises(ValueError):
        extract_policy(d, V, QuadratureSpec(64, 1))


def test_quadrature_spec_validation():
    with pytest.raises(ValueError):
        QuadratureSpec(1)
    with pytest.raises(ValueError):
        QuadratureSpec(64, 2)
