"""Cadlag paths with finitely many jumps.

A path is stored as a list of nodes ``(t, v)``.  Between consecutive nodes
with distinct times the path is linear; a jump at ``tau`` is stored as two
consecutive nodes with the same time, the left limit first and the value
second.  After the last node the path is constant up to ``horizon``.

Every path produced by the model (flow segments glued at jump times) has this
form, so evaluation and sup-distances reduce to scans over the node list.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np


class HorizonError(ValueError):
    """Query time outside the represented horizon."""


class DimensionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CadlagPath:
    times: np.ndarray
    values: np.ndarray
    horizon: float
    is_jump: np.ndarray = field(default=None)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if len(times) == 0 or len(times) != len(values):
            raise ValueError("path needs at least one node and matching times/values")
        if times[0] != 0.0:
            raise ValueError("path must start at time 0")
        if np.any(np.diff(times) < 0):
            raise ValueError("node times must be non-decreasing")
        # at most two nodes per time (left limit, value)
        if len(times) > 2 and np.any((times[2:] == times[1:-1]) & (times[1:-1] == times[:-2])):
            raise ValueError("more than two nodes share a time")
        if self.horizon < times[-1]:
            raise ValueError("horizon precedes last node")
        if not np.all(np.isfinite(values)):
            raise ValueError("non-finite path value")
        if self.is_jump is None:
            flags = np.zeros(len(times), dtype=bool)
            flags[1:] = times[1:] == times[:-1]
        else:
            flags = np.asarray(self.is_jump, dtype=bool).reshape(-1)
        times.setflags(write=False)
        values.setflags(write=False)
        flags.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "is_jump", flags)
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @classmethod
    def constant(cls, value, horizon: float) -> "CadlagPath":
        v = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(np.array([0.0]), v.reshape(1, -1), horizon)

    @classmethod
    def from_nodes(cls, times, values, horizon: float | None = None) -> "CadlagPath":
        times = np.asarray(times, dtype=float)
        return cls(times, values, float(times[-1]) if horizon is None else horizon)

    def jump_times(self) -> np.ndarray:
        return self.times[self.is_jump]

    def _check(self, t: float):
        if not (0.0 <= t <= self.horizon):
            raise HorizonError(f"time {t!r} outside [0, {self.horizon!r}]")

    def __call__(self, t: float) -> np.ndarray:
        return eval_path(self, t)

    def left_limit(self, t: float) -> np.ndarray:
        self._check(t)
        if t == 0.0:
            return self.values[0].copy()
        i = int(np.searchsorted(self.times, t, side="left")) - 1
        return _interp(self, i, t)

    def __eq__(self, other):
        if not isinstance(other, CadlagPath):
            return NotImplemented
        return (
            self.horizon == other.horizon
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.values, other.values)
        )


def _interp(x: CadlagPath, i: int, t: float) -> np.ndarray:
    """Value on the linear piece starting at node ``i``."""
    if i + 1 >= len(x.times):
        return x.values[-1].copy()
    t0, t1 = x.times[i], x.times[i + 1]
    if t == t0 or t1 == t0:
        return x.values[i].copy()
    v0, v1 = x.values[i], x.values[i + 1]
    return v0 + ((t - t0) / (t1 - t0)) * (v1 - v0)


def eval_path(x: CadlagPath, t: float) -> np.ndarray:
    x._check(t)
    i = int(np.searchsorted(x.times, t, side="right")) - 1
    return _interp(x, i, t)


def stop(x: CadlagPath, t: float) -> CadlagPath:
    """The stopped path ``x(. ^ t)``; the horizon is kept."""
    x._check(t)
    k = int(np.searchsorted(x.times, t, side="right"))
    times = list(x.times[:k])
    values = list(x.values[:k])
    if times[-1] != t:
        times.append(t)
        values.append(_interp(x, k - 1, t))
    return CadlagPath(np.array(times), np.array(values), x.horizon, _jump_flags(x, k, len(times)))


def _jump_flags(x: CadlagPath, k: int, n: int) -> np.ndarray:
    flags = np.zeros(n, dtype=bool)
    flags[:k] = x.is_jump[:k]
    return flags


def concat(x: CadlagPath, s: float, e) -> CadlagPath:
    """``x`` on ``[0, s)`` and the constant ``e`` on ``[s, horizon]``."""
    x._check(s)
    e = np.atleast_1d(np.asarray(e, dtype=float))
    if e.shape != (x.dim,):
        raise DimensionError(f"mark of shape {e.shape} for a {x.dim}-dimensional path")
    if s == 0.0:
        return CadlagPath(np.array([0.0]), e.reshape(1, -1), x.horizon)
    k = int(np.searchsorted(x.times, s, side="left"))
    times = list(x.times[:k])
    values = list(x.values[:k])
    flags = list(x.is_jump[:k])
    left = _interp(x, k - 1, s)
    times.append(s)
    values.append(left)
    flags.append(False)
    if not np.array_equal(left, e):
        times.append(s)
        values.append(e)
        flags.append(True)
    return CadlagPath(np.array(times), np.array(values), x.horizon, np.array(flags))


def _node_union(x: CadlagPath, y: CadlagPath, s: float) -> np.ndarray:
    ts = np.concatenate([x.times[x.times <= s], y.times[y.times <= s], [s]])
    return np.unique(ts)


def sup_dist(x: CadlagPath, y: CadlagPath, s: float) -> float:
    """``sup_{0<=t<=s} |x(t) - y(t)|`` in the max-norm.

    Exact for this representation: the difference is linear between union
    nodes, so its sup is attained at a node value or a left limit.
    """
    if x.dim != y.dim:
        raise DimensionError(f"dimensions {x.dim} and {y.dim} differ")
    x._check(s)
    y._check(s)
    best = 0.0
    for t in _node_union(x, y, s):
        best = max(best, float(np.max(np.abs(eval_path(x, t) - eval_path(y, t)))))
        if t > 0.0:
            best = max(best, float(np.max(np.abs(x.left_limit(t) - y.left_limit(t)))))
    return best


def sup_norm(x: CadlagPath, s: float) -> float:
    return sup_dist(x, CadlagPath.constant(np.zeros(x.dim), x.horizon), s)


def pseudo_metric(t: float, x: CadlagPath, s: float, y: CadlagPath) -> float:
    """``|t - s| + sup_r |x(r ^ t) - y(r ^ s)|``."""
    if x.dim != y.dim:
        raise DimensionError(f"dimensions {x.dim} and {y.dim} differ")
    xs, ys = stop(x, t), stop(y, s)
    r = max(t, s)
    h = max(xs.horizon, ys.horizon, r)
    xs = CadlagPath(xs.times, xs.values, h, xs.is_jump)
    ys = CadlagPath(ys.times, ys.values, h, ys.is_jump)
    return abs(t - s) + sup_dist(xs, ys, r)


def append_nodes(x: CadlagPath, times, values, jumps=None, horizon=None) -> CadlagPath:
    """Extend ``x`` by nodes at times not before its last node."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float).reshape(len(times), x.dim)
    jumps = np.zeros(len(times), dtype=bool) if jumps is None else np.asarray(jumps, dtype=bool)
    return CadlagPath(
        np.concatenate([x.times, times]),
        np.concatenate([x.values, values]),
        x.horizon if horizon is None else horizon,
        np.concatenate([x.is_jump, jumps]),
    )


def random_path(rng: np.random.Generator, dim: int, horizon: float, lower, upper,
                n_nodes: int = 6, max_jumps: int = 3) -> CadlagPath:
    """Piecewise-linear path inside a box with at most ``max_jumps`` jumps."""
    lower = np.broadcast_to(np.asarray(lower, dtype=float), (dim,))
    upper = np.broadcast_to(np.asarray(upper, dtype=float), (dim,))
    inner = np.sort(rng.uniform(0.0, horizon, size=n_nodes - 1))
    times = np.concatenate([[0.0], inner])
    n_jumps = int(rng.integers(0, max_jumps + 1))
    jump_at = set(rng.choice(np.arange(1, n_nodes), size=min(n_jumps, n_nodes - 1), replace=False).tolist())
    ts, vs, fl = [], [], []
    for i, t in enumerate(times):
        v = rng.uniform(lower, upper)
        if i in jump_at:
            ts.append(t)
            vs.append(rng.uniform(lower, upper))
            fl.append(False)
            ts.append(t)
            vs.append(v)
            fl.append(True)
        else:
            ts.append(t)
            vs.append(v)
            fl.append(False)
    return CadlagPath(np.array(ts), np.array(vs), horizon, np.array(fl))


# CSV block: header ``t,v1..vd,is_jump``


def to_csv(x: CadlagPath) -> str:
    buf = io.StringIO()
    cols = ["t"] + [f"v{i + 1}" for i in range(x.dim)] + ["is_jump"]
    buf.write(",".join(cols) + "\n")
    times, values, flags = list(x.times), list(x.values), list(x.is_jump)
    if times[-1] < x.horizon:
        times.append(x.horizon)
        values.append(x.values[-1])
        flags.append(False)
    for t, v, j in zip(times, values, flags):
        buf.write(",".join([repr(float(t))] + [repr(float(c)) for c in v] + [str(int(j))]) + "\n")
    return buf.getvalue()


def from_csv(text: str) -> CadlagPath:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    header = lines[0].split(",")
    if header[0] != "t" or header[-1] != "is_jump" or len(header) < 3:
        raise ValueError(f"bad path header {lines[0]!r}")
    d = len(header) - 2
    rows = [ln.split(",") for ln in lines[1:]]
    times = np.array([float(r[0]) for r in rows])
    values = np.array([[float(c) for c in r[1:1 + d]] for r in rows])
    flags = np.array([bool(int(r[-1])) for r in rows])
    for i in range(1, len(times)):
        if times[i] < times[i - 1] or (times[i] == times[i - 1] and not flags[i]):
            raise ValueError(f"non-increasing time at row {i + 1}")
    return CadlagPath(times, values, float(times[-1]), flags)
