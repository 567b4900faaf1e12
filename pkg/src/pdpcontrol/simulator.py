"""Event-driven simulation of the controlled process and Monte Carlo costs.

Replications advance together through the global time grid.  Within a grid
step the flow takes one Runge-Kutta step; if the integrated hazard crosses
the replication's exponential threshold inside the step, the jump time is
found by bisection, the pre-jump state is read off the straight line between
the step's nodes (the same interpolation the stored path uses), a mark is
drawn, and the replication continues from the jump time to the end of the
step.  Policies are queried at the start, at every jump and at every control
cell boundary; between jumps their answers depend only on the deterministic
flow, so each stage follows an open-loop schedule fixed at its jump time.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .flow import FlowDivergenceError, OpenLoopControl, TimeGrid, invert_hazard_in_step, rk4_step, solve_flow
from .model import AssumptionViolation, ProblemData, pick_atom, trapezoid_increment
from .paths import CadlagPath, append_nodes, concat, stop

DEFAULT_CHUNK = 16384


class RunawayError(RuntimeError):
    """Too many jumps; carries the statistics gathered so far."""

    def __init__(self, message: str, partial: dict):
        self.partial = partial
        super().__init__(message)


# -- policies ---------------------------------------------------------------


class JumpFeedbackPolicy:
    """Chooses control labels from (stage, time, lifted state).

    ``cell_steps`` is the number of grid steps per control cell; the policy
    is re-queried at cell boundaries.  ``None`` means labels only change at
    jumps.
    """

    name = "policy"
    cell_steps: int | None = None

    def decide(self, stage, t, z) -> np.ndarray:
        raise NotImplementedError

    def schedule(self, data: ProblemData, grid: TimeGrid, stage: int, t: float, z) -> OpenLoopControl:
        """The open-loop control this policy commits to at a jump at ``t``."""
        z = np.asarray(z, dtype=float).reshape(1, -1)
        lab = int(self.decide(np.array([stage]), np.array([t]), z)[0])
        if not self.cell_steps:
            return OpenLoopControl.constant(data.controls[lab])
        g = grid.index_after(t)
        times = [t] + [grid.time(k) for k in range(g, grid.steps + 1)]
        bps, labels = [], [data.controls[lab]]
        for i in range(len(times) - 1):
            z = rk4_step(data, times[i], times[i + 1], z, np.array([lab]))
            gi = g + i
            if gi < grid.steps and gi % self.cell_steps == 0:
                new = int(self.decide(np.array([stage]), np.array([times[i + 1]]), z)[0])
                if new != lab:
                    bps.append(times[i + 1])
                    labels.append(data.controls[new])
                    lab = new
        return OpenLoopControl(tuple(bps), tuple(labels))


@dataclass
class ConstantPolicy(JumpFeedbackPolicy):
    label: int
    name: str = "constant"
    cell_steps: int | None = None

    def decide(self, stage, t, z):
        return np.full(len(np.atleast_1d(t)), self.label, dtype=int)


@dataclass
class CellSchedulePolicy(JumpFeedbackPolicy):
    """Fixed label per control cell, whatever happens."""

    labels: tuple
    grid: TimeGrid
    cell_steps: int = 1
    name: str = "schedule"

    def decide(self, stage, t, z):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        g = np.floor(t * self.grid.steps / self.grid.horizon).astype(int)
        g = np.where(self.grid.time(g) > t, g - 1, g)
        g = np.clip(g, 0, self.grid.steps - 1)
        cell = np.minimum(g // self.cell_steps, len(self.labels) - 1)
        return np.asarray(self.labels, dtype=int)[cell]


# -- records ------------------------------------------------------------------


@dataclass
class MarkedSequence:
    times: list  # T_0 = s, T_1, ...; jumps after the horizon are not recorded
    marks: list  # E_0 = x(s), E_1, ...
    controls: list  # alpha_0, alpha_1, ...

    @property
    def n_jumps(self) -> int:
        return len(self.times) - 1


@dataclass
class Trajectory:
    start: float
    marked: MarkedSequence
    path: CadlagPath
    node_labels: np.ndarray  # control index in force from each path node on
    node_stage: np.ndarray
    cost: float
    stage_costs: list = field(default_factory=list)


@dataclass
class MonteCarloResult:
    mean: float
    half_width_95: float
    std_error: float
    n_rep: int
    mean_jumps: float
    costs: np.ndarray = field(repr=False)
    jump_counts: np.ndarray = field(repr=False)
    first_jump: np.ndarray = field(repr=False)  # T_1 - s, nan when no jump before T
    stage_means: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {"mean": float(self.mean), "half_width_95": float(self.half_width_95),
                "std_error": float(self.std_error), "n_rep": int(self.n_rep),
                "mean_jumps": float(self.mean_jumps),
                "stage_means": [float(v) for v in self.stage_means]}


def default_stage_cap(data: ProblemData) -> int:
    return int(math.ceil(10 * data.constants.Clam * data.horizon + 50))


# -- engine -------------------------------------------------------------------


def _run(data: ProblemData, s: float, z0: np.ndarray, policy: JumpFeedbackPolicy, grid: TimeGrid,
         key, reps: np.ndarray, stage_cap: int, recorder=None):
    n = len(reps)
    T = data.horizon
    z = np.repeat(z0[None, :], n, axis=0)
    tau = np.full(n, s)
    stage = np.zeros(n, dtype=np.int64)
    jumps = np.zeros(n, dtype=np.int64)
    first = np.full(n, np.nan)
    cost = np.zeros(n)
    stage_cost = np.zeros((n, stage_cap + 1))
    lam_acc = np.zeros(n)
    thresh = -np.log(rng.uniforms(key, reps, stage, rng.SLOT_JUMP))
    lab = policy.decide(stage, tau, z).astype(int)
    g0 = grid.index_after(s) - 1
    if recorder is not None:
        recorder.start(lab[0])
    for g in range(g0, grid.steps):
        t_end = grid.time(g + 1)
        if g > g0 and policy.cell_steps and g % policy.cell_steps == 0:
            lab = policy.decide(stage, tau, z).astype(int)
            if recorder is not None:
                recorder.relabel(lab[0])
        active = np.arange(n)
        while active.size:
            zt, t0, la = z[active], tau[active], lab[active]
            h = t_end - t0
            z1 = rk4_step(data, t0, t_end, zt, la)
            if not np.all(np.isfinite(z1)):
                raise FlowDivergenceError(float(t_end))
            lam_l = data.intensity(t0, zt, la)
            lam_r = data.intensity(t_end, z1, la)
            c_l = data.running_cost(t0, zt, la)
            d_lam = trapezoid_increment(h, lam_l, lam_r)
            hit = lam_acc[active] + d_lam >= thresh[active]
            u = np.zeros_like(h)
            if hit.any():
                u[hit] = invert_hazard_in_step(lam_acc[active][hit], lam_l[hit], lam_r[hit], h[hit],
                                               thresh[active][hit])
            t_jump = t0 + u
            hit &= t_jump < T
            # no jump in the rest of this step
            go = ~hit
            idx = active[go]
            if idx.size:
                c_r = data.running_cost(t_end, z1[go], la[go])
                inc = trapezoid_increment(h[go], c_l[go], c_r)
                cost[idx] += inc
                stage_cost[idx, stage[idx]] += inc
                lam_acc[idx] += d_lam[go]
                z[idx] = z1[go]
                tau[idx] = t_end
                if recorder is not None:
                    recorder.node(t_end, data.state_of(z1[go][0]), False)
            idx = active[hit]
            if not idx.size:
                break
            tj = t_jump[hit]
            zs, ze = zt[hit], z1[hit]
            w = ((tj - t0[hit]) / (t_end - t0[hit]))[:, None]
            zp = zs.copy()
            ti = data.term_index
            zp[:, ti] = zs[:, ti] + w * (ze[:, ti] - zs[:, ti])
            data.sync_max(zp, zs)
            if data.int_mask.any():
                src = ti[data.comp_of[data.int_mask]]
                zp[:, data.int_mask] = zs[:, data.int_mask] + trapezoid_increment(
                    (tj - t0[hit])[:, None], zs[:, src], zp[:, src])
            lah = la[hit]
            inc = trapezoid_increment(tj - t0[hit], c_l[hit], data.running_cost(tj, zp, lah))
            cost[idx] += inc
            stage_cost[idx, stage[idx]] += inc
            marks, wts = data.kernel(tj, zp, lah)
            stage[idx] += 1
            jumps[idx] += 1
            if stage.max() > stage_cap:
                bad = int(reps[np.argmax(stage)])
                raise RunawayError(
                    f"replication {bad} exceeded the stage cap {stage_cap}",
                    {"replications": int(n), "completed_cost_sum": float(cost.sum()),
                     "mean_jumps_so_far": float(jumps.mean()), "replication": bad},
                )
            e = pick_atom(marks, wts, rng.uniforms(key, reps[idx], stage[idx], rng.SLOT_MARK))
            pre = data.state_of(zp)
            if np.any(np.all(e == pre, axis=-1)):
                raise AssumptionViolation("a sampled mark equals the pre-jump value")
            first[idx] = np.where(np.isnan(first[idx]), tj - s, first[idx])
            z[idx] = data.reset(zp, e)
            tau[idx] = tj
            lam_acc[idx] = 0.0
            thresh[idx] = -np.log(rng.uniforms(key, reps[idx], stage[idx], rng.SLOT_JUMP))
            lab[idx] = policy.decide(stage[idx], tj, z[idx]).astype(int)
            if recorder is not None:
                recorder.jump(float(tj[0]), pre[0], e[0], int(lab[idx][0]), z[idx][0])
            active = idx[tj < t_end]
    term = data.terminal_cost(z)
    cost += term
    stage_cost[np.arange(n), stage] += term
    return cost, jumps, first, stage_cost


class _Recorder:
    def __init__(self, data, policy, grid, s, x, z0):
        self.data, self.policy, self.grid = data, policy, grid
        self.times, self.values, self.flags, self.labels, self.stages = [], [], [], [], []
        head = stop(x, s)
        self.head = CadlagPath(head.times, head.values, data.horizon, head.is_jump)
        self.s = s
        self.stage = 0
        self.label = None
        self.m_times, self.m_marks, self.m_controls = [s], [x(s)], []
        self.z0 = z0

    def start(self, lab):
        self.label = int(lab)
        self.m_controls.append(self.policy.schedule(self.data, self.grid, 0, self.s, self.z0))

    def relabel(self, lab):
        # the node at the cell boundary starts a segment under the new label
        self.label = int(lab)
        self.labels[-1] = self.label

    def node(self, t, v, is_jump):
        self.times.append(t)
        self.values.append(np.array(v, dtype=float))
        self.flags.append(is_jump)
        self.labels.append(self.label)
        self.stages.append(self.stage)

    def jump(self, t, pre, e, lab, z):
        self.node(t, pre, False)
        self.stage += 1
        self.label = lab
        self.node(t, e, True)
        self.m_times.append(t)
        self.m_marks.append(np.array(e, dtype=float))
        self.m_controls.append(self.policy.schedule(self.data, self.grid, self.stage, t, z))

    def trajectory(self, cost, stage_costs) -> Trajectory:
        head = self.head
        path = append_nodes(head, self.times, self.values, self.flags)
        k = len(head.times)
        labels = np.array([self.m_controls[0].indices(self.data).at(self.s)] * k + self.labels, dtype=int)
        stages = np.array([0] * k + self.stages, dtype=int)
        marked = MarkedSequence(self.m_times, self.m_marks, self.m_controls)
        return Trajectory(self.s, marked, path, labels, stages, float(cost), list(stage_costs))


def _key(seed: int, policy: JumpFeedbackPolicy, crn: bool):
    return rng.stream_key(seed, 0 if crn else rng.policy_tag(policy.name))


def _check_start(data: ProblemData, s: float, x: CadlagPath):
    if not 0.0 <= s < data.horizon:
        raise ValueError(f"start time {s} must lie in [0, {data.horizon})")
    if x.dim != data.dimension:
        raise ValueError(f"initial path has dimension {x.dim}, model has {data.dimension}")


def simulate_trajectory(data: ProblemData, s: float, x: CadlagPath, policy: JumpFeedbackPolicy, seed: int,
                        grid: TimeGrid, rep: int = 0, crn: bool = True, stage_cap: int | None = None) -> Trajectory:
    _check_start(data, s, x)
    cap = default_stage_cap(data) if stage_cap is None else stage_cap
    z0 = data.features_of_path(x, s)
    rec = _Recorder(data, policy, grid, s, x, z0)
    cost, jumps, first, sc = _run(data, s, z0, policy, grid, _key(seed, policy, crn),
                                  np.array([rep], dtype=np.int64), cap, rec)
    return rec.trajectory(cost[0], sc[0, :jumps[0] + 1])


def estimate_cost(data: ProblemData, s: float, x: CadlagPath, policy: JumpFeedbackPolicy, n_rep: int,
                  master_seed: int, grid: TimeGrid, crn: bool = False, threads: int = 1,
                  stage_cap: int | None = None, chunk: int = DEFAULT_CHUNK) -> MonteCarloResult:
    """Mean cost over ``n_rep`` replications; replication ``i`` uses key ``(master_seed, i)``.

    Chunks have a fixed size and are reduced in index order, so the result
    does not depend on ``threads``.
    """
    if n_rep < 2:
        raise ValueError("n_rep must be at least 2")
    _check_start(data, s, x)
    cap = default_stage_cap(data) if stage_cap is None else stage_cap
    z0 = data.features_of_path(x, s)
    key = _key(master_seed, policy, crn)
    bounds = [(a, min(a + chunk, n_rep)) for a in range(0, n_rep, chunk)]

    def work(b):
        return _run(data, s, z0, policy, grid, key, np.arange(b[0], b[1], dtype=np.int64), cap)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, bounds))
    else:
        parts = [work(b) for b in bounds]
    costs = np.concatenate([p[0] for p in parts])
    jumps = np.concatenate([p[1] for p in parts])
    first = np.concatenate([p[2] for p in parts])
    n_stage = int(jumps.max()) + 1
    stage_means = np.concatenate([p[3][:, :n_stage] for p in parts]).mean(axis=0)
    mean = float(costs.mean())
    se = float(costs.std(ddof=1) / math.sqrt(n_rep))
    return MonteCarloResult(mean, 1.959963984540054 * se, se, n_rep, float(jumps.mean()), costs, jumps,
                            first, stage_means)


# -- pathwise recomputation -----------------------------------------------------


def _walk(data: ProblemData, traj: Trajectory):
    """Lifted state at each stored path node from the start onwards."""
    path = traj.path
    k0 = int(np.searchsorted(path.times, traj.start, side="right")) - 1
    z = data.features_of_path(path, traj.start)
    out = [(k0, z.copy())]
    ti = data.term_index
    for i in range(k0 + 1, len(path.times)):
        prev = z
        v = path.values[i]
        if path.is_jump[i]:
            z = data.reset(prev[None, :], v[None, :])[0]
        else:
            z = prev.copy()
            z[ti] = v
            data.sync_max(z[None, :], prev[None, :])
            if data.int_mask.any():
                src = ti[data.comp_of[data.int_mask]]
                z[data.int_mask] = prev[data.int_mask] + trapezoid_increment(
                    path.times[i] - path.times[i - 1], prev[src], v[data.comp_of[data.int_mask]])
        out.append((i, z))
    return out


def _segment_costs(data: ProblemData, traj: Trajectory):
    nodes = _walk(data, traj)
    times = traj.path.times
    segs = []
    for (i, za), (j, zb) in zip(nodes, nodes[1:]):
        a = np.array([traj.node_labels[i]])
        if traj.path.is_jump[j]:
            segs.append((traj.node_stage[i], 0.0))
            continue
        h = times[j] - times[i]
        segs.append((traj.node_stage[i], float(trapezoid_increment(
            h, data.running_cost(times[i], za[None, :], a)[0], data.running_cost(times[j], zb[None, :], a)[0]))))
    term = float(data.terminal_cost(nodes[-1][1][None, :])[0])
    return segs, term


def pathwise_cost(data: ProblemData, traj: Trajectory) -> float:
    segs, term = _segment_costs(data, traj)
    total = 0.0
    for _, c in segs:
        total += c
    return total + term


def stage_cost_decomposition(data: ProblemData, traj: Trajectory) -> list:
    segs, term = _segment_costs(data, traj)
    out = [0.0] * (traj.marked.n_jumps + 1)
    for st, c in segs:
        out[st] += c
    out[-1] += term
    return out


def replay_path(data: ProblemData, traj: Trajectory, grid: TimeGrid) -> CadlagPath:
    """Rebuild the path from the marked sequence by flowing and concatenating."""
    m = traj.marked
    path = traj.path
    x = stop(path, m.times[0])
    x = CadlagPath(x.times, x.values, data.horizon, x.is_jump)
    for n, (t, ctl) in enumerate(zip(m.times, m.controls)):
        flow = solve_flow(data, t, x, ctl, grid).path()
        x = concat(flow, m.times[n + 1], m.marks[n + 1]) if n + 1 < len(m.times) else flow
    return x
