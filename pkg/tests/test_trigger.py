import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from egolane.trigger import (
    NoActiveHypotheses, SortedProbs, TriggerParams, fire, fire_array, s1, s2, s3, s4, sort_probs,
)

gamma = st.floats(-1.0, 1.0)


def sp(p1, p2=0.0, t=1):
    return SortedProbs(p1, p2, 0, t)


def test_sort_probs_examples():
    out = sort_probs({0: 0.7, 1: 0.2}, 5)
    assert (out.p_prime, out.p_second, out.argmax_id, out.t) == (0.7, 0.2, 0, 5)
    out = sort_probs({3: 0.6}, 1)
    assert (out.p_prime, out.p_second, out.argmax_id) == (0.6, 0.0, 3)
    assert sort_probs({0: 0.5, 1: 0.5}, 1).argmax_id == 0
    assert sort_probs({4: 0.5, 2: 0.5, 7: 0.1}, 1).argmax_id == 2
    with pytest.raises(NoActiveHypotheses):
        sort_probs({}, 1)


@settings(max_examples=100, deadline=None)
@given(st.dictionaries(st.integers(0, 10), st.floats(0.0, 1.0), min_size=1))
def test_sorted_probs_invariants(probs):
    out = sort_probs(probs, 1)
    assert 1.0 >= out.p_prime >= out.p_second >= 0.0
    assert probs[out.argmax_id] == out.p_prime
    assert out.argmax_id == min(k for k, v in probs.items() if v == out.p_prime)


def test_s1_examples():
    assert s1(sp(0.8), TriggerParams("s1", (1, 0, 0))) == 1
    assert s1(sp(0.5, t=0), TriggerParams("s1", (0, 0, 1))) == 0
    assert s1(sp(0.6, 0.4, 600), TriggerParams("s1", (0.2, 0.3, 0.5), 1200)) == 1
    # 0.12 + 0.06 + 0.25
    p = TriggerParams("s1", (0.2, 0.3, 0.5), 1200)
    assert fire_array(p, np.array([0.6]), np.array([0.4]), np.array([600]))[0]


def test_s1_clamps_time():
    p = TriggerParams("s1", (-1.0, 0.0, 0.5), 100)
    assert s1(sp(0.6, t=10_000), p) == 0  # -0.6 + 0.5 * 1


def test_s2_examples():
    assert s2(sp(0.5, t=1200), TriggerParams("s2", (0, 0, 1), 1200)) == 0
    assert s2(sp(0.8), TriggerParams("s2", (1, 0, 0))) == 1
    assert s2(sp(0.7, 0.2, 300), TriggerParams("s2", (0.5, -0.5, 0.2), 1200)) == 1
    # time term floored at 0 after the horizon
    assert s2(sp(0.5, t=5000), TriggerParams("s2", (0, 0, -1), 1200)) == 0


def test_s3_examples():
    for p1, p2, t in ((0.9, 0.1, 1), (0.3, 0.3, 500)):
        assert s3(sp(p1, p2, t), TriggerParams("s3", (0, 0, -1))) == 0
        assert s3(sp(p1, p2, t), TriggerParams("s3", (0, 0, 1))) == 1
    assert s3(sp(0.9, 0.1), TriggerParams("s3", (0.5, 0.5, -0.6))) == 1


def test_s4_examples():
    assert s4(sp(0.6), TriggerParams("s4", (1, 0))) == 1
    assert s4(sp(0.5, 0.5), TriggerParams("s4", (0, 1))) == 0
    assert s4(sp(0.7, 0.6), TriggerParams("s4", (0.5, 0.8))) == 1


def test_boundaries_wait():
    # exactly zero is "wait"
    assert s1(sp(0.5, 0.5, 600), TriggerParams("s1", (1.0, 0.0, -1.0), 300)) == 0
    assert s2(sp(0.5, 0.25, 0), TriggerParams("s2", (0.5, 0.0, -0.25), 1200)) == 0
    assert s3(sp(0.5, 0.25), TriggerParams("s3", (0.5, 0.0, -0.25))) == 0
    assert s4(sp(0.5, 0.25), TriggerParams("s4", (-0.5, 1.0))) == 0


def test_params_validation_and_serialization():
    with pytest.raises(ValueError):
        TriggerParams("s4", (0.1, 0.2, 0.3))
    with pytest.raises(ValueError):
        TriggerParams("s1", (1.5, 0, 0))
    with pytest.raises(ValueError):
        TriggerParams("s9", (0, 0))
    with pytest.raises(ValueError):
        TriggerParams("s1", (0, 0, 0), horizon=0)
    p = TriggerParams("S4", (0.25, -0.5))
    assert p.to_dict() == {"variant": "s4", "gamma": [0.25, -0.5], "horizon": 1200}
    assert TriggerParams.from_dict(p.to_dict()) == p
    with pytest.raises(ValueError):
        s1(sp(0.5), p)


@settings(max_examples=200, deadline=None)
@given(g1=gamma, g2=gamma, g3=gamma, p1=st.floats(0, 1), frac=st.floats(0, 1), t=st.integers(0, 3000),
       t2=st.integers(0, 3000))
def test_s3_s4_time_invariant(g1, g2, g3, p1, frac, t, t2):
    p2 = p1 * frac
    assert s3(sp(p1, p2, t), TriggerParams("s3", (g1, g2, g3))) == s3(sp(p1, p2, t2), TriggerParams("s3", (g1, g2, g3)))
    assert s4(sp(p1, p2, t), TriggerParams("s4", (g1, g2))) == s4(sp(p1, p2, t2), TriggerParams("s4", (g1, g2)))


@settings(max_examples=200, deadline=None)
@given(g1=st.floats(0, 1), g2=st.floats(0, 1), g3=gamma, variant=st.sampled_from(["s1", "s3"]),
       p1=st.floats(0, 1), dp=st.floats(0, 1), margin=st.floats(0, 1), dm=st.floats(0, 1), t=st.integers(0, 1500))
def test_monotone_for_nonnegative_weights(g1, g2, g3, variant, p1, dp, margin, dm, t):
    params = TriggerParams(variant, (g1, g2, g3))
    margin = min(margin, p1)
    hi_p = min(1.0, p1 + dp)
    fn = s1 if variant == "s1" else s3
    # higher p' at fixed margin
    assert fn(sp(hi_p, hi_p - margin, t), params) >= fn(sp(p1, p1 - margin, t), params)
    # larger margin at fixed p'
    hi_m = min(p1, margin + dm)
    assert fn(sp(p1, p1 - hi_m, t), params) >= fn(sp(p1, p1 - margin, t), params)


@settings(max_examples=100, deadline=None)
@given(g3=st.floats(1e-3, 1.0), p1=st.floats(0, 1))
def test_time_only_baselines(g3, p1):
    s1p = TriggerParams("s1", (0, 0, g3), 1200)
    assert s1(sp(p1, 0, 0), s1p) == 0
    assert s1(sp(p1, 0, 1200), s1p) == 1
    s2p = TriggerParams("s2", (0, 0, g3), 1200)
    assert s2(sp(p1, 0, 0), s2p) == 1
    assert s2(sp(p1, 0, 1200), s2p) == 0


@settings(max_examples=200, deadline=None)
@given(variant=st.sampled_from(["s1", "s2", "s3", "s4"]), g=st.lists(gamma, min_size=3, max_size=3),
       p1=st.floats(0, 1), frac=st.floats(0, 1), t=st.integers(0, 2500))
def test_fire_array_agrees_with_scalar(variant, g, p1, frac, t):
    params = TriggerParams(variant, tuple(g[:3 if variant != "s4" else 2]))
    p2 = p1 * frac
    assert fire(sp(p1, p2, t), params) == int(fire_array(params, np.array([p1]), np.array([p2]), np.array([t]))[0])
