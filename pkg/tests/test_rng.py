import numpy as np
from scipy import stats

from pdpcontrol import rng


def test_uniforms_are_pure_functions_of_key():
    k = rng.stream_key(7)
    a = rng.uniforms(k, np.arange(1000), np.zeros(1000, dtype=int), rng.SLOT_JUMP)
    b = rng.uniforms(k, np.arange(1000)[::-1], np.zeros(1000, dtype=int), rng.SLOT_JUMP)[::-1]
    assert np.array_equal(a, b)
    assert np.all((a > 0) & (a < 1))


def test_streams_differ_by_seed_tag_stage_and_slot():
    k = rng.stream_key(7)
    reps = np.arange(64)
    base = rng.uniforms(k, reps, 0, 0)
    for other in (rng.uniforms(rng.stream_key(8), reps, 0, 0), rng.uniforms(rng.stream_key(7, 3), reps, 0, 0),
                  rng.uniforms(k, reps, 1, 0), rng.uniforms(k, reps, 0, 1)):
        assert not np.any(other == base)


def test_uniformity_and_independence():
    k = rng.stream_key(2024)
    u = rng.uniforms(k, np.arange(200_000), 3, rng.SLOT_MARK)
    assert stats.kstest(u, "uniform").pvalue > 1e-3
    v = rng.uniforms(k, np.arange(200_000), 4, rng.SLOT_MARK)
    assert abs(np.corrcoef(u, v)[0, 1]) < 4 / np.sqrt(200_000)


def test_policy_tag_is_stable():
    assert rng.policy_tag("constant") == rng.policy_tag("constant")
    assert rng.policy_tag("constant") != rng.policy_tag("schedule")
