"""Shipped example problems, addressable as ``builtin:<name>``."""

from __future__ import annotations

import copy

from .model import ModelError, ProblemData, problem_from_document

# two atoms whose mean is 1/2 for every x in [0, 1]; neither equals x unless its weight is 0
_HALVING_ATOMS = [
    {"mark": ["feat[0] / 2"], "weight": "feat[0]"},
    {"mark": ["(1 + feat[0]) / 2"], "weight": "1 - feat[0]"},
]

_UNIT_LIFT = [{"kind": "terminal_value", "component": 0, "lower": 0.0, "upper": 1.0, "nodes": 11}]

PROBLEMS = {
    "constant_terminal": {
        "name": "constant_terminal",
        "dimension": 1,
        "horizon": 1.0,
        "controls": ["only"],
        "default_control": "only",
        "tables": {},
        "constants": {"Cf": 3.0, "Clam": 0.5, "Lf": 0.0, "LQ": 1.0},
        "lift": _UNIT_LIFT,
        "drift": ["0"],
        "intensity": "0.5",
        "running_cost": "0",
        "terminal_cost": "3",
        "kernel": {"atoms": _HALVING_ATOMS, "normalize": True},
    },
    "unit_running": {
        "name": "unit_running",
        "dimension": 1,
        "horizon": 1.0,
        "controls": ["only"],
        "default_control": "only",
        "tables": {},
        "constants": {"Cf": 1.0, "Clam": 0.5, "Lf": 0.0, "LQ": 1.0},
        "lift": _UNIT_LIFT,
        "drift": ["0"],
        "intensity": "0.5",
        "running_cost": "1",
        "terminal_cost": "0",
        "kernel": {"atoms": _HALVING_ATOMS, "normalize": True},
    },
    "two_control_markov": {
        "name": "two_control_markov",
        "dimension": 1,
        "horizon": 1.0,
        "controls": ["hold", "drive"],
        "default_control": "hold",
        "tables": {
            "rate": {"hold": 0.0, "drive": 1.0},
            "lam": {"hold": 1.0, "drive": 0.5},
            "cost": {"hold": 0.0, "drive": 0.3},
        },
        "constants": {"Cf": 2.5, "Clam": 1.0, "Lf": 2.0, "LQ": 1.0},
        "lift": [{"kind": "terminal_value", "component": 0, "lower": 0.0, "upper": 1.0, "nodes": 41}],
        "drift": ["-ctrl[rate] * feat[0]"],
        "intensity": "ctrl[lam]",
        "running_cost": "feat[0] + ctrl[cost]",
        "terminal_cost": "feat[0]",
        "kernel": {"atoms": _HALVING_ATOMS, "normalize": True},
    },
    "running_max_pathdep": {
        "name": "running_max_pathdep",
        "dimension": 1,
        "horizon": 1.0,
        "controls": ["rest", "pull"],
        "default_control": "rest",
        "tables": {"rate": {"rest": 0.0, "pull": 1.5}, "cost": {"rest": 0.0, "pull": 0.3}},
        "constants": {"Cf": 2.5, "Clam": 1.0, "Lf": 3.0, "LQ": 1.0},
        "lift": [
            {"kind": "terminal_value", "component": 0, "lower": 0.0, "upper": 1.0, "nodes": 21},
            {"kind": "running_max", "component": 0, "lower": 0.0, "upper": 1.0, "nodes": 21},
        ],
        "drift": ["0.8 * (1 - feat[0]) - ctrl[rate] * feat[0]"],
        "intensity": "0.5 + 0.5 * feat[0]",
        "running_cost": "ctrl[cost]",
        "terminal_cost": "feat[1]",
        "kernel": {"atoms": _HALVING_ATOMS, "normalize": True},
    },
    # constant intensity 2: jump counts are Poisson(2 (T - s))
    "poisson_rate_two": {
        "name": "poisson_rate_two",
        "dimension": 1,
        "horizon": 1.0,
        "controls": ["only"],
        "default_control": "only",
        "tables": {},
        "constants": {"Cf": 1.0, "Clam": 2.0, "Lf": 1.0, "LQ": 1.0},
        "lift": _UNIT_LIFT,
        "drift": ["0"],
        "intensity": "2",
        "running_cost": "0",
        "terminal_cost": "feat[0]",
        "kernel": {"atoms": _HALVING_ATOMS, "normalize": True},
    },
}


def builtin_document(name: str) -> dict:
    if name not in PROBLEMS:
        raise ModelError(f"unknown builtin problem {name!r}; available: {sorted(PROBLEMS)}")
    return copy.deepcopy(PROBLEMS[name])


def builtin_problem(name: str) -> ProblemData:
    return problem_from_document(builtin_document(name))


# Two states, two controls, two cost-bearing stages.  Stage-1 data depend on
# the whole history, not only on the current state.
TWO_STAGE_MDP = {
    "states": ["low", "high"],
    "controls": ["wait", "act"],
    "horizon": 2,
    "kernel": [
        {"stage": 0, "match": ["low", "wait"], "row": [0.7, 0.3]},
        {"stage": 0, "match": ["low", "act"], "row": [0.2, 0.8]},
        {"stage": 0, "match": ["high", "wait"], "row": [0.4, 0.6]},
        {"stage": 0, "match": ["high", "act"], "row": [0.9, 0.1]},
        {"stage": 1, "match": ["low", "act", "*", "*"], "row": [0.5, 0.5]},
        {"stage": 1, "match": ["*", "*", "*", "wait"], "row": [0.6, 0.4]},
        {"stage": 1, "match": ["*", "*", "*", "act"], "row": [0.1, 0.9]},
    ],
    "cost": [
        {"stage": 0, "match": ["low", "wait"], "value": 1.0},
        {"stage": 0, "match": ["low", "act"], "value": 1.6},
        {"stage": 0, "match": ["high", "wait"], "value": 0.5},
        {"stage": 0, "match": ["high", "act"], "value": 2.0},
        {"stage": 1, "match": ["*", "act", "high", "*"], "value": 0.2},
        {"stage": 1, "match": ["*", "*", "high", "wait"], "value": 2.5},
        {"stage": 1, "match": ["*", "*", "high", "act"], "value": 1.1},
        {"stage": 1, "match": ["*", "*", "low", "wait"], "value": 0.3},
        {"stage": 1, "match": ["*", "*", "low", "act"], "value": 0.9},
    ],
}
