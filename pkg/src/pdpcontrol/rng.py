"""Counter-based uniforms keyed by (seed, replication, stage, slot).

Every random number the simulator consumes is a pure function of its key, so
results do not depend on how replications are split across workers.
"""

from __future__ import annotations

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = np.uint64(30), np.uint64(27), np.uint64(31), np.uint64(11)

SLOT_JUMP = 0
SLOT_MARK = 1


def _mix(x: np.ndarray) -> np.ndarray:
    x = x + _GAMMA
    x = (x ^ (x >> _S30)) * _M1
    x = (x ^ (x >> _S27)) * _M2
    return x ^ (x >> _S31)


def _u64(v) -> np.ndarray:
    return np.asarray(v).astype(np.int64).astype(np.uint64) if np.asarray(v).dtype != np.uint64 \
        else np.asarray(v)


def stream_key(seed: int, tag: int = 0) -> np.uint64:
    """Key of a stream; ``tag`` separates policies when streams must not be shared."""
    with np.errstate(over="ignore"):
        k = _mix(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))
        k = _mix(k ^ np.array([tag & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))
    return k[0]


def uniforms(key: np.uint64, rep, stage, slot: int) -> np.ndarray:
    """Uniforms in the open interval (0, 1), one per ``(rep, stage)`` entry."""
    rep = _u64(rep)
    stage = _u64(stage)
    with np.errstate(over="ignore"):
        x = _mix(np.uint64(key) ^ rep)
        x = _mix(x ^ (stage * np.uint64(4) + np.uint64(slot)))
    return ((x >> _S11).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def policy_tag(name: str) -> int:
    """Stable integer tag from a policy name."""
    h = 1469598103934665603
    for b in name.encode():
        h = ((h ^ b) * 1099511628211) & 0xFFFFFFFFFFFFFFFF
    return h
