import json
import subprocess
import sys

import pytest

from pdpcontrol.cli import EXIT_CHECK, EXIT_INPUT, EXIT_OK, main
from pdpcontrol.builtins import builtin_document


def run(*args):
    return main([str(a) for a in args])


def test_check_echo_is_canonical_and_stable(tmp_path):
    e1, e2 = tmp_path / "a.json", tmp_path / "b.json"
    assert run("check", "--problem", "builtin:two_control_markov", "--echo", e1) == EXIT_OK
    assert run("check", "--problem", e1, "--echo", e2) == EXIT_OK
    assert e1.read_bytes() == e2.read_bytes()


def test_check_flags_violated_constants(tmp_path):
    doc = builtin_document("constant_terminal")
    doc["intensity"] = "2"
    f = tmp_path / "p.json"
    f.write_text(json.dumps(doc))
    assert run("check", "--problem", f, "--samples", 10) == EXIT_CHECK


@pytest.mark.parametrize("args", [
    ("check",),
    ("check", "--problem", "builtin:nope"),
    ("check", "--problem", "/nonexistent.json"),
    ("simulate", "--problem", "builtin:two_control_markov", "--x0", "0.1,0.2"),
    ("simulate", "--problem", "builtin:two_control_markov", "--policy", "builtin:constant:fly"),
    ("simulate", "--problem", "builtin:two_control_markov", "--threads", 0),
    ("verify", "--problem", "builtin:two_control_markov", "--check", "bogus"),
    ("mdp", "--state", "middle"),
])
def test_bad_input_exits_2(args):
    assert run(*args) == EXIT_INPUT


def test_syntax_error_exit_2(tmp_path):
    doc = builtin_document("constant_terminal")
    doc["drift"] = ["feat[0] +"]
    f = tmp_path / "p.json"
    f.write_text(json.dumps(doc))
    assert run("check", "--problem", f) == EXIT_INPUT


def test_simulate_is_reproducible(tmp_path):
    outs = []
    for i in range(2):
        traj, stats = tmp_path / f"t{i}.csv", tmp_path / f"s{i}.json"
        assert run("simulate", "--problem", "builtin:running_max_pathdep", "--x0", "0.3", "--seed", 7,
                   "--n-rep", 500, "--out", traj, "--stats", stats) == EXIT_OK
        outs.append((traj.read_bytes(), stats.read_bytes()))
    assert outs[0] == outs[1]
    header = outs[0][0].decode().splitlines()
    assert header[0].startswith("# problem_hash=") and header[1] == "t,v1,stage,control_label,is_jump"
    stats = json.loads(outs[0][1])
    assert stats["n_rep"] == 500 and "problem_hash" in stats


def test_solve_evaluate_roundtrip(tmp_path):
    v, rep, ev = tmp_path / "v.bin", tmp_path / "r.json", tmp_path / "e.json"
    assert run("solve", "--problem", "builtin:unit_running", "--out", v, "--report", rep) == EXIT_OK
    assert run("evaluate", "--problem", "builtin:unit_running", "--value", v, "--s", 0.25, "--x0", 0.5,
               "--n-rep", 1, "--out", ev) == EXIT_OK
    out = json.loads(ev.read_text())
    assert out["value"] == pytest.approx(0.75, abs=1e-6)
    # a value file for another problem is refused
    assert run("evaluate", "--problem", "builtin:constant_terminal", "--value", v) == EXIT_INPUT
    assert run("simulate", "--problem", "builtin:unit_running", "--policy", v, "--n-rep", 10) == EXIT_OK


def test_verify_regularity_without_problem(tmp_path):
    out = tmp_path / "v.json"
    assert run("verify", "--check", "regularity", "--out", out) == EXIT_OK
    assert json.loads(out.read_text())["passed"] is True


def test_mdp_all_checks(tmp_path):
    out = tmp_path / "m.json"
    assert run("mdp", "--samples", 50, "--out", out) == EXIT_OK
    rep = json.loads(out.read_text())
    assert rep["optimal"]["n_policies"] == 32
    assert rep["sufficiency"]["passed"] is True


def test_console_entry_point_version():
    r = subprocess.run([sys.executable, "-m", "pdpcontrol.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip() == "0.1.0"


def test_reports_name_the_policy_class(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run("solve", "--problem", "builtin:running_max_pathdep", "--nt", 16, "--report", a) == EXIT_OK
    assert run("solve", "--problem", "builtin:constant_terminal", "--nt", 16, "--report", b) == EXIT_OK
    assert "do not determine" in json.loads(a.read_text())["policy_class"]
    assert "current state" in json.loads(b.read_text())["policy_class"]
