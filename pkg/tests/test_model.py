import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdpcontrol.builtins import PROBLEMS, builtin_document, builtin_problem
from pdpcontrol.expr import ExpressionError
from pdpcontrol.model import (
    AssumptionViolation,
    ModelError,
    UnknownControlError,
    evaluate_coefficients,
    parse_problem,
    pick_atom,
    problem_from_document,
    sample_kernel,
    transport_distance,
    validate_assumptions,
)
from pdpcontrol.paths import CadlagPath, random_path, stop


def doc_with(**changes):
    doc = builtin_document("constant_terminal")
    doc.update(changes)
    return doc


def test_constant_document_maps_fields():
    d = builtin_problem("constant_terminal")
    assert d.constants.Clam == 0.5 and d.constants.Cf == 3.0
    assert d.horizon == 1.0 and d.controls == ("only",)


def test_atom_equal_to_current_value_is_rejected():
    kern = {"atoms": [{"mark": ["feat[0]"], "weight": "1"}]}
    with pytest.raises(AssumptionViolation, match="differ from the pre-jump value"):
        problem_from_document(doc_with(kernel=kern))


def test_canonical_echo_roundtrip():
    for name in PROBLEMS:
        d = builtin_problem(name)
        again = parse_problem(d.canonical_json())
        assert again.canonical_json() == d.canonical_json()
        assert again.problem_hash() == d.problem_hash()


def test_syntax_error_reports_line_and_column():
    text = json.dumps(doc_with(running_cost="1 + * 2"), indent=2)
    with pytest.raises(ExpressionError) as err:
        parse_problem(text)
    line = next(i + 1 for i, ln in enumerate(text.splitlines()) if "1 + * 2" in ln)
    assert f"line {line}" in str(err.value) and err.value.column == 5


def test_schema_errors():
    doc = doc_with()
    del doc["constants"]["Lf"]
    with pytest.raises(ModelError, match="constants lack"):
        problem_from_document(doc)
    with pytest.raises(ModelError):
        parse_problem("[1, 2]")
    with pytest.raises(ModelError):
        problem_from_document(doc_with(default_control="nope"))


def test_evaluate_coefficients_and_unknown_label():
    d = builtin_problem("two_control_markov")
    x = CadlagPath.constant(0.4, 1.0)
    f, lam, ell = evaluate_coefficients(d, 0.5, x, "drive")
    assert f[0] == pytest.approx(-0.4) and lam == 0.5 and ell == pytest.approx(0.7)
    with pytest.raises(UnknownControlError):
        evaluate_coefficients(d, 0.5, x, "fly")


def test_running_integral_feature_matches_trapezoid():
    doc = doc_with(lift=[{"kind": "terminal_value", "component": 0, "lower": 0, "upper": 1, "nodes": 3},
                         {"kind": "running_integral", "component": 0, "lower": 0, "upper": 1, "nodes": 3}])
    d = problem_from_document(doc)
    x = CadlagPath(np.array([0.0, 0.5, 0.5, 1.0]), np.array([[0.0], [1.0], [0.2], [0.6]]), 1.0)
    # trapezoid by hand: 0.5 * 0.5 * (0 + 1) + 0.5 * 0.5 * (0.2 + 0.6)
    assert d.features_of_path(x, 1.0)[1] == pytest.approx(0.25 + 0.2)


def _two_point():
    return problem_from_document(doc_with(
        lift=[{"kind": "terminal_value", "component": 0, "lower": -1, "upper": 1, "nodes": 3}],
        kernel={"atoms": [{"mark": ["1"], "weight": "0.5"}, {"mark": ["-1"], "weight": "0.5"}]}))


def test_sample_kernel_inverse_cdf():
    d = _two_point()
    x = CadlagPath.constant(0.0, 1.0)
    assert sample_kernel(d, 0.3, x, "only", 0.25)[0] == -1.0
    assert sample_kernel(d, 0.3, x, "only", 0.75)[0] == 1.0
    single = problem_from_document(doc_with(kernel={"atoms": [{"mark": ["0.7"], "weight": "2"}]}))
    for u in (0.0, 0.3, 0.999):
        assert sample_kernel(single, 0.1, x, "only", u)[0] == 0.7


def test_sample_kernel_frequencies():
    d = builtin_problem("two_control_markov")
    z = np.full((100_000, 1), 0.3)
    marks, w = d.kernel(0.0, z, np.zeros(100_000, dtype=int))
    e = pick_atom(marks, w, np.random.default_rng(1).uniform(size=100_000))
    p = np.mean(e[:, 0] == 0.15)  # mark x/2 with weight x
    assert abs(p - 0.3) <= 3 * np.sqrt(0.3 * 0.7 / 1e5)


def test_validate_builtins_and_violations():
    for name in PROBLEMS:
        rep = validate_assumptions(builtin_problem(name), 30, 0)
        assert rep.ok, (name, rep.to_dict())
    doc = doc_with(intensity="2")
    doc["constants"]["Clam"] = 1.0
    rep = validate_assumptions(problem_from_document(doc), 10, 0)
    assert not rep.passed["intensity_max"]
    sin_doc = doc_with(drift=["sin(feat[0])"], lift=[{"kind": "terminal_value", "component": 0,
                                                     "lower": -2, "upper": 2, "nodes": 5}])
    sin_doc["constants"].update({"Lf": 1.0})
    rep = validate_assumptions(problem_from_document(sin_doc), 200, 3)
    assert rep.observed["lipschitz_coeff"] <= 1.0


def test_transport_distance_oracles():
    # moving all mass by 0.25 costs 0.25
    assert transport_distance([[0.0], [1.0]], [0.5, 0.5], [[0.25], [1.25]], [0.5, 0.5]) == pytest.approx(0.25)
    m1 = np.array([[0.0, 0.0], [1.0, 1.0]])
    m2 = np.array([[0.0, 0.5], [1.0, 1.0]])
    assert transport_distance(m1, [0.5, 0.5], m2, [0.5, 0.5]) == pytest.approx(0.25)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 0.99), st.sampled_from(["two_control_markov", "running_max_pathdep"]))
def test_non_anticipation(seed, t, name):
    d = builtin_problem(name)
    x = random_path(np.random.default_rng(seed), 1, 1.0, 0.0, 1.0)
    for a in d.controls:
        f1, l1, c1 = evaluate_coefficients(d, t, x, a)
        f2, l2, c2 = evaluate_coefficients(d, t, stop(x, t), a)
        assert np.array_equal(f1, f2) and l1 == l2 and c1 == c2


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.integers(0, 1))
def test_kernel_rows_normalized(v, m, a):
    d = builtin_problem("running_max_pathdep")
    z = np.array([[v, max(v, m)]])
    _, w = d.kernel(0.5, z, np.array([a]))
    assert abs(w.sum() - 1.0) <= 1e-12 and np.all(w >= 0)


def test_cost_bound_is_per_term():
    doc = doc_with(running_cost="3")  # l = h = C_f = 3
    assert validate_assumptions(problem_from_document(doc), 10, 0).passed["cost_bound"]
    doc = doc_with(running_cost="3.5")
    assert not validate_assumptions(problem_from_document(doc), 10, 0).passed["cost_bound"]
