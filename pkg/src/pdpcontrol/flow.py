"""Controlled flow between jumps, integrated hazard, survival and jump times.

All integration happens on a global uniform grid ``t_g = T*g/G``.  A flow
that starts off the grid takes one short step to the next grid node and then
follows the grid, so flows started at different times share their nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ModelError, ProblemData, trapezoid_increment
from .paths import CadlagPath, append_nodes, stop


class FlowDivergenceError(ArithmeticError):
    def __init__(self, time: float):
        self.time = time
        super().__init__(f"flow state became non-finite at t={time!r}")


JUMP_TOL = 1e-10


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    steps: int

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("grid needs at least one step")

    @classmethod
    def from_dt(cls, horizon: float, dt: float) -> "TimeGrid":
        if not dt > 0:
            raise ValueError("dt must be positive")
        steps = max(1, int(math.ceil(horizon / dt - 1e-9)))
        return cls(horizon, steps)

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    def time(self, g):
        # one formula everywhere so that grid times compare exactly
        return self.horizon * np.asarray(g, dtype=float) / self.steps if np.ndim(g) else \
            self.horizon * float(g) / self.steps

    @property
    def times(self) -> np.ndarray:
        return self.horizon * np.arange(self.steps + 1, dtype=float) / self.steps

    def index_after(self, t: float) -> int:
        """Smallest grid index with time strictly greater than ``t``."""
        g = int(math.floor(t * self.steps / self.horizon)) + 1
        while g > 0 and self.time(g - 1) > t:
            g -= 1
        while g <= self.steps and self.time(g) <= t:
            g += 1
        return g

    def index_of(self, t: float) -> int | None:
        """Grid index of ``t`` if ``t`` is exactly a grid time."""
        g = int(round(t * self.steps / self.horizon))
        return g if 0 <= g <= self.steps and self.time(g) == t else None


@dataclass(frozen=True)
class OpenLoopControl:
    """Piecewise-constant control; ``labels[i]`` is in force on ``[b_{i-1}, b_i)``.

    ``breakpoints`` are the interior switching times, so there is one more
    label than breakpoints.  The last label stays in force to the horizon.
    """

    breakpoints: tuple
    labels: tuple

    def __post_init__(self):
        b = tuple(float(x) for x in self.breakpoints)
        if len(self.labels) != len(b) + 1:
            raise ValueError("need exactly one more label than breakpoints")
        if any(b2 <= b1 for b1, b2 in zip(b, b[1:])):
            raise ValueError("breakpoints must be increasing")
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "labels", tuple(self.labels))

    @classmethod
    def constant(cls, label) -> "OpenLoopControl":
        return cls((), (label,))

    def at(self, t: float):
        import bisect

        return self.labels[bisect.bisect_right(self.breakpoints, t)]

    def indices(self, data: ProblemData) -> "OpenLoopControl":
        return OpenLoopControl(self.breakpoints, tuple(data.label_index(a) for a in self.labels))


def rk4_step(data: ProblemData, t0, t1, z, labels) -> np.ndarray:
    """One classical Runge-Kutta step of the lifted state from ``t0`` to ``t1``.

    ``t0`` may be an array (rows starting off the grid).  Running maxima are
    refreshed after each stage; running integrals are finalised with the
    trapezoid of the endpoint values so that they agree with the same
    functional evaluated on the stored path.
    """
    h = np.asarray(t1 - t0, dtype=float)
    hc = h[..., None] if h.ndim else h
    t0 = np.asarray(t0, dtype=float)
    tm = t0 + 0.5 * h
    k1 = data.ode_rhs(t0, z, labels)
    z2 = data.sync_max(z + 0.5 * hc * k1, z)
    k2 = data.ode_rhs(tm, z2, labels)
    z3 = data.sync_max(z + 0.5 * hc * k2, z)
    k3 = data.ode_rhs(tm, z3, labels)
    z4 = data.sync_max(z + hc * k3, z)
    k4 = data.ode_rhs(t1, z4, labels)
    out = z + (hc / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    data.sync_max(out, z)
    if data.int_mask.any():
        src = data.term_index[data.comp_of[data.int_mask]]
        out[..., data.int_mask] = z[..., data.int_mask] + trapezoid_increment(hc, z[..., src], out[..., src])
    return out


def hazard_in_step(lam0, lam_l, lam_r, h, u):
    """Integrated hazard ``u`` into a step with linearly interpolated intensity."""
    return lam0 + lam_l * u + (lam_r - lam_l) * u * u / (2.0 * h)


def invert_hazard_in_step(lam0, lam_l, lam_r, h, target, tol: float = JUMP_TOL):
    """Smallest ``u`` in ``(0, h]`` with ``hazard_in_step(u) >= target`` by bisection."""
    lo = np.zeros_like(np.asarray(h, dtype=float))
    hi = np.array(h, dtype=float, copy=True)
    while True:
        live = (hi - lo) > tol
        if not live.any():
            return hi
        mid = 0.5 * (lo + hi)
        ok = hazard_in_step(lam0, lam_l, lam_r, h, mid) >= target
        hi = np.where(live & ok, mid, hi)
        lo = np.where(live & ~ok, mid, lo)


@dataclass(frozen=True, eq=False)
class FlowPath:
    base: CadlagPath
    start: float
    control: OpenLoopControl
    grid: TimeGrid
    times: np.ndarray  # nodes start, next grid nodes..., T
    lifted: np.ndarray  # (n_nodes, k)
    values: np.ndarray  # (n_nodes, d) path values at the nodes
    labels: np.ndarray  # control index used on each step
    lam_left: np.ndarray
    lam_right: np.ndarray
    hazard: np.ndarray  # integrated hazard at nodes

    @property
    def dt(self) -> float:
        return self.grid.dt

    def path(self) -> CadlagPath:
        """``base`` stopped at ``start`` followed by the flow."""
        head = stop(self.base, self.start)
        return append_nodes(head, self.times[1:], self.values[1:])

    def _locate(self, t: float) -> int:
        if not self.start <= t <= self.grid.horizon:
            raise ModelError(f"time {t} outside [{self.start}, {self.grid.horizon}]")
        return max(0, min(int(np.searchsorted(self.times, t, side="right")) - 1, len(self.times) - 2))


def solve_flow(data: ProblemData, s: float, x: CadlagPath, control: OpenLoopControl, dt: float | TimeGrid) -> FlowPath:
    grid = dt if isinstance(dt, TimeGrid) else TimeGrid.from_dt(data.horizon, dt)
    T = data.horizon
    if not 0.0 <= s < T:
        raise ModelError(f"flow start {s} must lie in [0, {T})")
    ctl = control.indices(data)
    g = grid.index_after(s)
    times = np.concatenate([[s], grid.time(np.arange(g, grid.steps + 1))])
    for b in ctl.breakpoints:
        if s < b < T and grid.index_of(b) is None:
            raise ModelError(f"control breakpoint {b} is not a grid time")
    z = data.features_of_path(x, s)[None, :]
    n = len(times)
    lifted = np.empty((n, data.n_features))
    lifted[0] = z[0]
    labs = np.array([ctl.at(t) for t in times[:-1]], dtype=int)
    lam_l = np.empty(n - 1)
    lam_r = np.empty(n - 1)
    haz = np.zeros(n)
    for i in range(n - 1):
        a = labs[i:i + 1]
        z1 = rk4_step(data, times[i], times[i + 1], z, a)
        if not np.all(np.isfinite(z1)):
            raise FlowDivergenceError(float(times[i + 1]))
        lam_l[i] = data.intensity(times[i], z, a)[0]
        lam_r[i] = data.intensity(times[i + 1], z1, a)[0]
        haz[i + 1] = haz[i] + trapezoid_increment(times[i + 1] - times[i], lam_l[i], lam_r[i])
        lifted[i + 1] = z1[0]
        z = z1
    return FlowPath(x, float(s), control, grid, times, lifted, lifted[:, data.term_index], labs, lam_l, lam_r, haz)


def integrated_hazard(data: ProblemData, phi: FlowPath, s: float, t: float) -> float:
    """``int_s^t lambda`` along the flow (trapezoid, linear within steps)."""
    if not phi.start <= s <= t <= data.horizon:
        raise ModelError(f"need {phi.start} <= s <= t <= {data.horizon}, got s={s}, t={t}")

    def cum(r):
        i = phi._locate(r)
        h = phi.times[i + 1] - phi.times[i]
        return float(hazard_in_step(phi.hazard[i], phi.lam_left[i], phi.lam_right[i], h, r - phi.times[i]))

    return max(0.0, cum(t) - cum(s))


def survival_and_discount(data: ProblemData, phi: FlowPath, s: float, t: float) -> tuple[float, float]:
    f = math.exp(-integrated_hazard(data, phi, s, t))
    return f, f


def sample_next_jump(data: ProblemData, phi: FlowPath, s: float, u: float) -> float | None:
    """First time after ``s`` at which the integrated hazard reaches ``-log u``."""
    if not 0.0 < u < 1.0 + 1e-300:
        raise ValueError("u must lie in (0, 1]")
    target = -math.log(u)
    i0 = phi._locate(s)
    h0 = phi.times[i0 + 1] - phi.times[i0]
    base = float(hazard_in_step(phi.hazard[i0], phi.lam_left[i0], phi.lam_right[i0], h0, s - phi.times[i0]))
    goal = base + target
    if phi.hazard[-1] < goal:
        return None
    i = max(i0, int(np.searchsorted(phi.hazard, goal, side="left")) - 1)
    h = phi.times[i + 1] - phi.times[i]
    lo_u = s - phi.times[i] if i == i0 else 0.0
    u_hit = invert_hazard_in_step(phi.hazard[i], phi.lam_left[i], phi.lam_right[i], h, goal)
    return float(phi.times[i] + max(float(u_hit), lo_u))
