"""Problem data: coefficients, mark kernel, lifted path features.

Coefficients read the path only through a finite list of features of the
stopped path (current value, running maximum, running integral of a
component).  The features have explicit flow and jump update rules, which is
what lets the simulator stay path-dependent while the solver works on a
finite-dimensional grid.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.stats import wasserstein_distance

from . import expr as ex
from .paths import CadlagPath, eval_path, random_path, sup_dist

FEATURE_KINDS = ("terminal_value", "running_max", "running_integral")


class ModelError(ValueError):
    """Invalid problem document or model data."""


class UnknownControlError(ModelError):
    pass


class DegenerateKernelError(ModelError):
    pass


class AssumptionViolation(ModelError):
    pass


@dataclass(frozen=True)
class PathFeature:
    kind: str
    component: int
    lower: float
    upper: float
    nodes: int = 21

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ModelError(f"unknown feature kind {self.kind!r}")
        if not self.upper > self.lower:
            raise ModelError(f"feature bounds [{self.lower}, {self.upper}] are empty")
        if self.nodes < 2:
            raise ModelError("a feature axis needs at least 2 nodes")


@dataclass(frozen=True)
class Constants:
    Cf: float
    Clam: float
    Lf: float
    LQ: float

    def __post_init__(self):
        for k in ("Cf", "Clam", "Lf", "LQ"):
            if not getattr(self, k) >= 0:
                raise ModelError(f"constant {k} must be nonnegative")


def trapezoid_increment(h, a, b):
    # shared by the simulator and path feature code so lifted integrals replay exactly
    return 0.5 * h * (a + b)


@dataclass(eq=False)
class ProblemData:
    name: str
    dimension: int
    horizon: float
    controls: tuple
    default_control: str
    tables: dict
    constants: Constants
    lift: tuple
    drift_src: tuple
    intensity_src: str
    running_cost_src: str
    terminal_cost_src: str
    atoms_src: tuple  # ((mark exprs...), weight expr)
    normalize: bool = True
    _compiled: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        d, k = self.dimension, len(self.lift)
        if d < 1:
            raise ModelError("dimension must be positive")
        if not self.horizon > 0:
            raise ModelError("horizon must be positive")
        if not self.controls:
            raise ModelError("control set is empty")
        if len(set(self.controls)) != len(self.controls):
            raise ModelError("duplicate control labels")
        if self.default_control not in self.controls:
            raise ModelError(f"default control {self.default_control!r} not in control set")
        term = {}
        for i, f in enumerate(self.lift):
            if not 0 <= f.component < d:
                raise ModelError(f"feature {i} refers to component {f.component} of a {d}-dimensional state")
            if f.kind == "terminal_value":
                term.setdefault(f.component, i)
        missing = [c for c in range(d) if c not in term]
        if missing:
            raise ModelError(f"lift must include a terminal_value feature for components {missing}")
        self.term_index = np.array([term[c] for c in range(d)])
        self.comp_of = np.array([f.component for f in self.lift])
        self.kinds = tuple(f.kind for f in self.lift)
        self.max_mask = np.array([kd == "running_max" for kd in self.kinds])
        self.int_mask = np.array([kd == "running_integral" for kd in self.kinds])
        self.term_mask = np.array([kd == "terminal_value" for kd in self.kinds])
        tables = {}
        for name, row in self.tables.items():
            missing = [a for a in self.controls if a not in row]
            if missing:
                raise ModelError(f"table {name!r} lacks entries for {missing}")
            tables[name] = np.array([float(row[a]) for a in self.controls])
        self._tables = tables
        if len(self.drift_src) != d:
            raise ModelError(f"drift has {len(self.drift_src)} components, expected {d}")
        if not self.atoms_src:
            raise ModelError("kernel needs at least one atom")
        c = self._compiled
        mk = lambda src: ex.Expr(src, k, tables)  # noqa: E731
        c["drift"] = [mk(s) for s in self.drift_src]
        c["intensity"] = mk(self.intensity_src)
        c["running_cost"] = mk(self.running_cost_src)
        c["terminal_cost"] = mk(self.terminal_cost_src)
        c["atoms"] = []
        for marks, weight in self.atoms_src:
            if len(marks) != d:
                raise ModelError(f"kernel atom mark has {len(marks)} components, expected {d}")
            c["atoms"].append(([mk(m) for m in marks], mk(weight)))
        self._check_static_kernel()

    # -- labels ---------------------------------------------------------------

    @property
    def n_controls(self) -> int:
        return len(self.controls)

    @property
    def n_features(self) -> int:
        return len(self.lift)

    @property
    def default_index(self) -> int:
        return self.controls.index(self.default_control)

    def label_index(self, a) -> int:
        if isinstance(a, (int, np.integer)) and 0 <= a < len(self.controls):
            return int(a)
        try:
            return self.controls.index(a)
        except ValueError:
            raise UnknownControlError(f"unknown control label {a!r}") from None

    # -- vectorised coefficient evaluation on lifted states -------------------

    def drift(self, t, z, labels) -> np.ndarray:
        return np.stack([f(t, z, labels) for f in self._compiled["drift"]], axis=-1)

    def intensity(self, t, z, labels) -> np.ndarray:
        return self._compiled["intensity"](t, z, labels)

    def running_cost(self, t, z, labels) -> np.ndarray:
        return self._compiled["running_cost"](t, z, labels)

    def terminal_cost(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        labels = np.full(z.shape[:-1], self.default_index)
        return self._compiled["terminal_cost"](self.horizon, z, labels)

    def kernel(self, t, z, labels, check: bool = True):
        """Atoms and weights of the mark distribution.

        Returns ``marks`` of shape ``(n, n_atoms, d)`` and ``weights`` of shape
        ``(n, n_atoms)``; weights are normalised when the model says so.
        """
        z = np.asarray(z, dtype=float)
        marks = np.stack(
            [np.stack([m(t, z, labels) for m in ms], axis=-1) for ms, _ in self._compiled["atoms"]], axis=-2
        )
        w = np.stack([wt(t, z, labels) for _, wt in self._compiled["atoms"]], axis=-1)
        if check and np.any(w < 0):
            raise DegenerateKernelError("negative kernel weight")
        if self.normalize:
            tot = w.sum(axis=-1, keepdims=True)
            if check and np.any(tot <= 0):
                raise DegenerateKernelError("kernel weights sum to zero")
            w = w / np.where(tot > 0, tot, 1.0)
        return marks, w

    def ode_rhs(self, t, z, labels) -> np.ndarray:
        """Time derivative of the lifted state along the flow.

        Running maxima carry no derivative here; they are updated by taking
        maxima after each step.
        """
        dz = np.zeros_like(z)
        f = self.drift(t, z, labels)
        dz[..., self.term_index] = f
        if self.int_mask.any():
            dz[..., self.int_mask] = z[..., self.term_index[self.comp_of[self.int_mask]]]
        return dz

    def state_of(self, z) -> np.ndarray:
        """Current path value ``x(t)`` from lifted states."""
        return np.asarray(z)[..., self.term_index]

    def sync_max(self, z, base) -> np.ndarray:
        """Raise running maxima in ``z`` to cover the current value."""
        if self.max_mask.any():
            cur = z[..., self.term_index[self.comp_of[self.max_mask]]]
            z[..., self.max_mask] = np.maximum(base[..., self.max_mask], cur)
        return z

    def reset(self, z, e) -> np.ndarray:
        """Lifted state of ``x (x)_t e`` from the lifted state of ``x`` at ``t``."""
        e = np.asarray(e, dtype=float)
        z = np.asarray(z, dtype=float)
        shape = np.broadcast_shapes(z.shape[:-1], e.shape[:-1]) + z.shape[-1:]
        z = np.broadcast_to(z, shape).copy()
        z[..., self.term_index] = e
        if self.max_mask.any():
            comp = self.comp_of[self.max_mask]
            z[..., self.max_mask] = np.maximum(z[..., self.max_mask], e[..., comp])
        return z

    # -- features of explicit paths -------------------------------------------

    def features_of_path(self, x: CadlagPath, t: float) -> np.ndarray:
        if x.dim != self.dimension:
            raise ModelError(f"path dimension {x.dim} != model dimension {self.dimension}")
        cur = eval_path(x, t)
        k = int(np.searchsorted(x.times, t, side="right"))
        ts = list(x.times[:k])
        vs = list(x.values[:k])
        if ts[-1] != t:
            ts.append(t)
            vs.append(cur)
        vs = np.array(vs)
        z = np.empty(self.n_features)
        for i, f in enumerate(self.lift):
            c = f.component
            if f.kind == "terminal_value":
                z[i] = cur[c]
            elif f.kind == "running_max":
                z[i] = np.max(vs[:, c])
            else:
                acc = 0.0
                for j in range(1, len(ts)):
                    acc = acc + trapezoid_increment(ts[j] - ts[j - 1], vs[j - 1, c], vs[j, c])
                z[i] = acc
        return z

    # -- serialisation ---------------------------------------------------------

    def to_document(self) -> dict:
        comp = self._compiled
        return {
            "name": self.name,
            "dimension": self.dimension,
            "horizon": float(self.horizon),
            "controls": list(self.controls),
            "default_control": self.default_control,
            "tables": {k: {a: float(v[a]) for a in self.controls} for k, v in sorted(self.tables.items())},
            "constants": {k: float(getattr(self.constants, k)) for k in ("Cf", "Clam", "Lf", "LQ")},
            "lift": [
                {"kind": f.kind, "component": f.component, "lower": float(f.lower),
                 "upper": float(f.upper), "nodes": f.nodes}
                for f in self.lift
            ],
            "drift": [e.canonical() for e in comp["drift"]],
            "intensity": comp["intensity"].canonical(),
            "running_cost": comp["running_cost"].canonical(),
            "terminal_cost": comp["terminal_cost"].canonical(),
            "kernel": {
                "atoms": [{"mark": [m.canonical() for m in ms], "weight": w.canonical()} for ms, w in comp["atoms"]],
                "normalize": self.normalize,
            },
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_document(), sort_keys=True, indent=2) + "\n"

    def problem_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def _check_static_kernel(self):
        # an atom that is literally the current value for every component
        term_src = {c: ex.Feat(int(self.term_index[c])) for c in range(self.dimension)}
        for j, (ms, w) in enumerate(self._compiled["atoms"]):
            if all(m.ast == term_src[c] for c, m in enumerate(ms)):
                raise AssumptionViolation(
                    f"kernel atom {j} equals the current state x(t); post-jump marks must differ "
                    "from the pre-jump value"
                )


# -- document parsing ---------------------------------------------------------


def _locate(text: str, needle: str) -> str:
    enc = json.dumps(needle)
    pos = text.find(enc)
    if pos < 0:
        return ""
    line = text.count("\n", 0, pos) + 1
    col = pos - (text.rfind("\n", 0, pos) + 1) + 1
    return f" (line {line}, column {col})"


def problem_from_document(doc: dict, text: str = "") -> ProblemData:
    required = ["dimension", "horizon", "controls", "default_control", "constants", "lift",
                "drift", "intensity", "running_cost", "terminal_cost", "kernel"]
    missing = [k for k in required if k not in doc]
    if missing:
        raise ModelError(f"problem document lacks fields {missing}")
    consts = doc["constants"]
    need = [k for k in ("Cf", "Clam", "Lf", "LQ") if k not in consts]
    if need:
        raise ModelError(f"constants lack {need}")
    d = int(doc["dimension"])
    drift = doc["drift"]
    if isinstance(drift, str):
        drift = [drift]
    atoms = []
    for a in doc["kernel"].get("atoms", []):
        mark = a["mark"]
        if isinstance(mark, str):
            mark = [mark]
        atoms.append((tuple(mark), a.get("weight", "1")))
    controls = doc["controls"]
    if isinstance(controls, dict):
        controls = list(controls)
    try:
        return ProblemData(
            name=str(doc.get("name", "problem")),
            dimension=d,
            horizon=float(doc["horizon"]),
            controls=tuple(str(c) for c in controls),
            default_control=str(doc["default_control"]),
            tables={k: dict(v) for k, v in doc.get("tables", {}).items()},
            constants=Constants(**{k: float(consts[k]) for k in ("Cf", "Clam", "Lf", "LQ")}),
            lift=tuple(PathFeature(f["kind"], int(f["component"]), float(f["lower"]), float(f["upper"]),
                                   int(f.get("nodes", 21))) for f in doc["lift"]),
            drift_src=tuple(drift),
            intensity_src=doc["intensity"],
            running_cost_src=doc["running_cost"],
            terminal_cost_src=doc["terminal_cost"],
            atoms_src=tuple(atoms),
            normalize=bool(doc["kernel"].get("normalize", True)),
        )
    except ex.ExpressionError as err:
        where = _locate(text, err.source) if (text and err.source) else ""
        raise ex.ExpressionError(f"{err}{where} in {err.source!r}", err.column, err.source) from None


def parse_problem(text: str) -> ProblemData:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise ModelError(f"malformed problem document: {err.msg} (line {err.lineno}, column {err.colno})") from None
    if not isinstance(doc, dict):
        raise ModelError("problem document must be a JSON object")
    return problem_from_document(doc, text)


# -- coefficient access on explicit paths ---------------------------------------


def evaluate_coefficients(data: ProblemData, t: float, x: CadlagPath, a):
    """``(f, lambda, ell)(t, x, a)`` computed through the lift."""
    if not 0.0 <= t <= data.horizon:
        raise ModelError(f"time {t} outside [0, {data.horizon}]")
    ai = np.array([data.label_index(a)])
    z = data.features_of_path(x, t)[None, :]
    return data.drift(t, z, ai)[0], float(data.intensity(t, z, ai)[0]), float(data.running_cost(t, z, ai)[0])


def _sorted_atoms(marks, weights):
    """Order atoms lexicographically by mark (per row)."""
    keys = np.moveaxis(marks, -1, 0)[::-1]
    order = np.lexsort(keys, axis=-1)
    m = np.take_along_axis(marks, order[..., None], axis=-2)
    w = np.take_along_axis(weights, order, axis=-1)
    return m, w


def pick_atom(marks, weights, u):
    """Inverse-CDF choice among atoms; rows are independent.

    ``marks`` (n, A, d), ``weights`` (n, A), ``u`` (n,) in [0, 1).
    """
    m, w = _sorted_atoms(marks, weights)
    cum = np.cumsum(w, axis=-1)
    target = np.asarray(u)[..., None] * cum[..., -1:]
    idx = np.sum(cum <= target, axis=-1)
    last_pos = w.shape[-1] - 1 - np.argmax((w > 0)[..., ::-1], axis=-1)
    idx = np.minimum(idx, last_pos)
    return np.take_along_axis(m, idx[..., None, None], axis=-2)[..., 0, :]


def sample_kernel(data: ProblemData, t: float, x: CadlagPath, a, u: float) -> np.ndarray:
    ai = np.array([data.label_index(a)])
    z = data.features_of_path(x, t)[None, :]
    marks, w = data.kernel(t, z, ai)
    e = pick_atom(marks, w, np.array([u]))[0]
    if np.array_equal(e, data.state_of(z[0])):
        raise AssumptionViolation(f"sampled mark {e} equals the current state at t={t}")
    return e


# -- statistical assumption validation ----------------------------------------


@dataclass
class ValidationReport:
    n_samples: int
    seed: int
    observed: dict
    declared: dict
    passed: dict
    notes: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def to_dict(self) -> dict:
        return {"n_samples": self.n_samples, "seed": self.seed, "ok": self.ok,
                "checks": {k: {"observed": self.observed[k], "declared": self.declared[k],
                               "passed": self.passed[k]} for k in self.observed},
                "notes": self.notes}


def transport_distance(m1, w1, m2, w2) -> float:
    """Earth mover's distance between two finite atom sets, max-norm ground cost."""
    m1, m2 = np.atleast_2d(m1), np.atleast_2d(m2)
    if m1.shape[1] == 1:
        return float(wasserstein_distance(m1[:, 0], m2[:, 0], w1, w2))
    cost = np.max(np.abs(m1[:, None, :] - m2[None, :, :]), axis=-1)
    n1, n2 = len(w1), len(w2)
    a_eq = np.zeros((n1 + n2, n1 * n2))
    for i in range(n1):
        a_eq[i, i * n2:(i + 1) * n2] = 1.0
    for j in range(n2):
        a_eq[n1 + j, j::n2] = 1.0
    res = linprog(cost.ravel(), A_eq=a_eq, b_eq=np.concatenate([w1, w2]), bounds=(0, None), method="highs")
    return float(res.fun)


def validate_assumptions(data: ProblemData, n_samples: int, seed: int) -> ValidationReport:
    """Empirical bounds and Lipschitz ratios against the declared constants.

    Pairs of paths are half independent draws and half small perturbations of
    each other, so that difference quotients probe the local constants.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    c = data.constants
    T = data.horizon
    lo = np.array([data.lift[i].lower for i in data.term_index])
    hi = np.array([data.lift[i].upper for i in data.term_index])
    obs = {"drift_growth": 0.0, "intensity_max": 0.0, "intensity_min": np.inf, "cost_min": np.inf,
           "cost_bound": 0.0, "lipschitz_coeff": 0.0, "lipschitz_terminal": 0.0,
           "kernel_mass_error": 0.0, "kernel_min_weight": np.inf, "kernel_self_mass": 0.0,
           "kernel_transport": 0.0}
    for n in range(n_samples):
        t = float(rng.uniform(0.0, T))
        x = random_path(rng, data.dimension, T, lo, hi)
        if n % 2:
            y = CadlagPath(x.times, x.values + rng.normal(0.0, 1e-3 * (hi - lo), x.values.shape), T, x.is_jump)
        else:
            y = random_path(rng, data.dimension, T, lo, hi)
        zx = data.features_of_path(x, t)[None, :]
        zy = data.features_of_path(y, t)[None, :]
        zxT = data.features_of_path(x, T)[None, :]
        zyT = data.features_of_path(y, T)[None, :]
        dist_t = sup_dist(x, y, t)
        dist_T = sup_dist(x, y, T)
        supx = sup_dist(x, CadlagPath.constant(np.zeros(data.dimension), T), t)
        hx, hy = float(data.terminal_cost(zxT)[0]), float(data.terminal_cost(zyT)[0])
        if dist_T > 0:
            obs["lipschitz_terminal"] = max(obs["lipschitz_terminal"], abs(hx - hy) / dist_T)
        lip = 0.0
        for ai in range(data.n_controls):
            a = np.array([ai])
            fx, fy = data.drift(t, zx, a)[0], data.drift(t, zy, a)[0]
            lx, ly = float(data.intensity(t, zx, a)[0]), float(data.intensity(t, zy, a)[0])
            cx, cy = float(data.running_cost(t, zx, a)[0]), float(data.running_cost(t, zy, a)[0])
            obs["drift_growth"] = max(obs["drift_growth"], float(np.max(np.abs(fx))) / (1.0 + supx))
            obs["intensity_max"] = max(obs["intensity_max"], lx)
            obs["intensity_min"] = min(obs["intensity_min"], lx)
            obs["cost_min"] = min(obs["cost_min"], cx, hx)
            obs["cost_bound"] = max(obs["cost_bound"], cx, hx)
            lip = max(lip, float(np.max(np.abs(fx - fy))) + abs(lx - ly) + abs(cx - cy))
            mx, wx = data.kernel(t, zx, a, check=False)
            my, wy = data.kernel(t, zy, a, check=False)
            obs["kernel_min_weight"] = min(obs["kernel_min_weight"], float(wx.min()))
            obs["kernel_mass_error"] = max(obs["kernel_mass_error"], abs(float(wx.sum()) - 1.0))
            cur = data.state_of(zx[0])
            hit = np.all(mx[0] == cur, axis=-1)
            obs["kernel_self_mass"] = max(obs["kernel_self_mass"], float(wx[0][hit].sum()))
            if dist_t > 0:
                w1 = transport_distance(mx[0], np.clip(wx[0], 0, None), my[0], np.clip(wy[0], 0, None))
                obs["kernel_transport"] = max(obs["kernel_transport"], w1 / dist_t)
        if dist_t > 0:
            obs["lipschitz_coeff"] = max(obs["lipschitz_coeff"], lip / dist_t)
    slack = 1e-9
    declared = {"drift_growth": c.Cf, "intensity_max": c.Clam, "intensity_min": 0.0, "cost_min": 0.0,
                "cost_bound": c.Cf, "lipschitz_coeff": c.Lf, "lipschitz_terminal": c.Lf,
                "kernel_mass_error": 1e-12, "kernel_min_weight": 0.0, "kernel_self_mass": 0.0,
                "kernel_transport": c.LQ}
    lower_bounds = {"intensity_min", "cost_min", "kernel_min_weight"}
    passed = {}
    for k, v in obs.items():
        if k in lower_bounds:
            passed[k] = bool(v >= declared[k] - slack)
        else:
            passed[k] = bool(v <= declared[k] + slack)
    obs = {k: float(v) for k, v in obs.items()}
    notes = ["kernel transport ratio is the exact earth mover's distance between atom sets, "
             "which is the sharp constant for finite-support kernels"]
    return ValidationReport(n_samples, seed, obs, declared, passed, notes)
