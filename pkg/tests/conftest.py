import functools

import numpy as np
import pytest

from pdpcontrol.builtins import builtin_document, builtin_problem
from pdpcontrol.model import problem_from_document
from pdpcontrol.solver import QuadratureSpec, solve_value

ACCEPTANCE_LINES = []


@functools.lru_cache(maxsize=None)
def solved(name: str, n_t: int = 64, switches: int = 0):
    data = builtin_problem(name)
    return data, solve_value(data, QuadratureSpec(n_t, switches))


def single_control(name: str, keep: str):
    """Builtin problem restricted to one control label."""
    doc = builtin_document(name)
    doc["controls"] = [keep]
    doc["default_control"] = keep
    doc["tables"] = {k: {keep: v[keep]} for k, v in doc["tables"].items()}
    return problem_from_document(doc)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
