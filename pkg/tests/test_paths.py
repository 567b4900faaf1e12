import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdpcontrol.paths import (
    CadlagPath,
    DimensionError,
    HorizonError,
    concat,
    eval_path,
    from_csv,
    pseudo_metric,
    random_path,
    stop,
    sup_dist,
    to_csv,
)


def ramp(slope=1.0, horizon=1.0):
    return CadlagPath(np.array([0.0, horizon]), np.array([[0.0], [slope * horizon]]), horizon)


def test_eval_linear_and_jump():
    x = CadlagPath(np.array([0.0, 1.0, 1.0, 2.0]), np.array([[0.0], [1.0], [5.0], [5.0]]), 2.0)
    assert eval_path(x, 0.5)[0] == 0.5
    assert eval_path(x, 1.0)[0] == 5.0  # right-continuous
    assert x.left_limit(1.0)[0] == 1.0
    assert list(x.jump_times()) == [1.0]
    with pytest.raises(HorizonError):
        eval_path(x, 2.5)


def test_concat_overwrites_after_s():
    x = ramp()
    y = concat(x, 0.5, [3.0])
    assert eval_path(y, 0.25)[0] == 0.25
    assert eval_path(y, 0.5)[0] == 3.0
    assert eval_path(y, 1.0)[0] == 3.0
    assert y.left_limit(0.5)[0] == 0.5
    with pytest.raises(DimensionError):
        concat(x, 0.5, [1.0, 2.0])


def test_stop_freezes_value():
    x = CadlagPath(np.array([0.0, 1.5, 1.5, 2.0]), np.array([[0.0], [1.5], [4.0], [4.0]]), 2.0)
    y = stop(x, 1.0)
    assert eval_path(y, 2.0)[0] == eval_path(x, 1.0)[0] == 1.0
    assert stop(x, 2.0) == x


def test_sup_dist_examples():
    zero = CadlagPath.constant(0.0, 1.0)
    three = CadlagPath.constant(3.0, 1.0)
    assert sup_dist(zero, zero, 1.0) == 0.0
    assert sup_dist(zero, three, 0.4) == 3.0
    # x = t, y = 2t on [0, 1]: brute force on a dense grid
    x, y = ramp(1.0), ramp(2.0)
    dense = max(abs(eval_path(x, t)[0] - eval_path(y, t)[0]) for t in np.linspace(0, 1, 1001))
    assert sup_dist(x, y, 1.0) == pytest.approx(dense) == pytest.approx(1.0)


def test_sup_dist_sees_left_limits():
    x = CadlagPath(np.array([0.0, 0.5, 0.5]), np.array([[0.0], [2.0], [0.0]]), 1.0)
    assert sup_dist(x, CadlagPath.constant(0.0, 1.0), 1.0) == 2.0


def test_pseudo_metric_examples():
    x0 = CadlagPath.constant(0.0, 2.0)
    y1 = CadlagPath.constant(1.0, 2.0)
    assert pseudo_metric(1.0, x0, 2.0, y1) == 2.0
    x = ramp()
    assert pseudo_metric(0.3, x, 0.3, x) == 0.0
    gaps = [pseudo_metric(0.3, x, 0.3 + 1.0 / n, x) for n in (2, 4, 8, 16)]
    assert all(a > b for a, b in zip(gaps, gaps[1:]))


def test_csv_roundtrip_and_rejects_decreasing():
    x = CadlagPath(np.array([0.0, 0.5, 0.5, 1.0]), np.array([[0.0], [1.0], [2.0], [2.5]]), 1.0)
    assert from_csv(to_csv(x)) == x
    with pytest.raises(ValueError):
        from_csv("t,v1,is_jump\n0.0,1.0,0\n0.5,1.0,0\n0.4,1.0,0\n")


# -- properties -------------------------------------------------------------------------

seeds = st.integers(0, 2**32 - 1)
times = st.floats(0.0, 1.0, allow_nan=False)


def _path(seed, dim=1):
    return random_path(np.random.default_rng(seed), dim, 1.0, -2.0, 2.0)


@given(seeds, times, st.floats(-3, 3), st.floats(-3, 3))
def test_concat_is_overwriting(seed, s, e1, e2):
    x = _path(seed)
    assert concat(concat(x, s, [e1]), s, [e2]) == concat(x, s, [e2])


@given(seeds, st.floats(0.01, 1.0), st.floats(-3, 3), st.floats(1e-3, 1.0))
def test_concat_leaves_past_untouched(seed, s, e, frac):
    x = _path(seed)
    r = s * (1 - frac)
    y = concat(x, s, [e])
    # stored nodes are kept bit for bit; values inside the segment cut at s
    # are re-interpolated from the inserted left-limit node
    for t, v in zip(x.times, x.values):
        if t < s and not (t in x.jump_times()):
            assert np.array_equal(y.values[list(y.times).index(t)], v)
    assert sup_dist(stop(y, r), stop(x, r), r) <= 1e-12


@settings(max_examples=50)
@given(seeds, seeds, seeds, times, times, times)
def test_pseudo_metric_is_pseudo_metric(a, b, c, t, s, r):
    x, y, z = _path(a), _path(b), _path(c)
    dxy = pseudo_metric(t, x, s, y)
    assert dxy == pytest.approx(pseudo_metric(s, y, t, x), abs=1e-12)
    assert dxy <= pseudo_metric(t, x, r, z) + pseudo_metric(r, z, s, y) + 1e-12
    assert pseudo_metric(t, x, t, stop(x, t)) == 0.0


@given(seeds, seeds, times, times)
def test_sup_dist_monotone_in_s(a, b, s1, s2):
    x, y = _path(a, 2), _path(b, 2)
    lo, hi = min(s1, s2), max(s1, s2)
    assert sup_dist(x, y, lo) <= sup_dist(x, y, hi)


@given(seeds)
def test_csv_roundtrip_property(seed):
    x = _path(seed, 2)
    y = from_csv(to_csv(x))
    assert all(np.array_equal(x(t), y(t)) for t in np.linspace(0, 1, 17))
