import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy import stats

from egolane.mmq import (
    MMQ_CAP, Chi2Params, NumericDomainError, channel_mmq, chi2_cdf, chi2inv, gammainc_lower, mmq, mmq_array, nis,
    penalty, type_pseudo_nis,
)

# frozen from scipy.stats.chi2.ppf
CHI2_95_1 = 3.841458820694124
CHI2_95_2 = 5.991464547107979


def test_nis_examples():
    assert nis([0.0, 0.0], np.eye(2)) == 0.0
    assert nis([1.0], [[1.0]]) == 1.0
    assert nis([1.0, 2.0], np.diag([1.0, 4.0])) == pytest.approx(2.0, abs=1e-15)


def test_nis_matches_direct_inverse(rng):
    for _ in range(50):
        n = int(rng.integers(1, 12))
        A = rng.normal(size=(n, n))
        S = A @ A.T + n * np.eye(n)
        r = rng.normal(size=n)
        assert nis(r, S) == pytest.approx(float(r @ np.linalg.inv(S) @ r), rel=1e-10)


@pytest.mark.parametrize("S", [np.array([[1.0, 2.0], [2.0, 1.0]]), np.array([[0.0]]), np.array([[1.0, 0.5], [0.0, 1.0]])])
def test_nis_rejects_non_spd(S):
    with pytest.raises(NumericDomainError):
        nis(np.ones(len(S)), S)


def test_chi2inv_examples():
    for d in range(1, 11):
        assert chi2inv(0.0, d) == 0.0
    assert chi2inv(0.5, 2) == pytest.approx(-2 * math.log(0.5), abs=1e-12)
    assert chi2inv(0.5, 2) == pytest.approx(1.3862944, abs=1e-6)
    assert chi2inv(0.95, 1) == pytest.approx(3.841459, abs=1e-5)
    assert chi2inv(0.95, 2) == pytest.approx(CHI2_95_2, abs=1e-9)


@pytest.mark.parametrize("p", [-0.1, 1.0, 1.5, float("nan")])
def test_chi2inv_domain(p):
    with pytest.raises(NumericDomainError):
        chi2inv(p, 3)


def test_chi2inv_rejects_bad_dof():
    with pytest.raises(NumericDomainError):
        chi2inv(0.5, 0)


def test_chi2inv_matches_scipy():
    for d in range(1, 31):
        for p in (1e-6, 0.01, 0.3, 0.5, 0.9, 0.95, 0.99, 0.999999):
            assert chi2inv(p, d) == pytest.approx(stats.chi2.ppf(p, d), rel=1e-9, abs=1e-12)


def test_gammainc_matches_scipy():
    from scipy.special import gammainc
    for a in (0.5, 1.0, 2.5, 10.0, 60.0):
        for x in (1e-4, 0.3, 1.0, 5.0, 30.0, 200.0):
            assert gammainc_lower(a, x) == pytest.approx(gammainc(a, x), rel=1e-11, abs=1e-14)


@settings(max_examples=200, deadline=None)
@given(p=st.floats(1e-8, 1 - 1e-8), d=st.integers(1, 60))
def test_chi2inv_round_trip(p, d):
    assert abs(chi2_cdf(chi2inv(p, d), d) - p) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(p=st.floats(0.01, 0.98), dp=st.floats(0.001, 0.01), d=st.integers(1, 30))
def test_chi2inv_monotone(p, dp, d):
    assert chi2inv(p + dp, d) > chi2inv(p, d)
    assert chi2inv(p, d + 1) > chi2inv(p, d)


def test_mmq_examples():
    params = Chi2Params(0.95, 2)
    assert mmq(CHI2_95_2, 0.0, params) == pytest.approx(0.0, abs=1e-12)
    assert mmq(0.0, 0.0, params) == MMQ_CAP
    assert mmq(2 * 5.991465, 0.0, params) == pytest.approx(-math.log(2), abs=1e-6)
    assert mmq(11.98293, 0.0, params) == pytest.approx(-0.693147, abs=1e-6)


def test_zero_dof_channel_is_missing():
    assert channel_mmq(0.0, 10, 0) is None
    out = mmq_array(np.array([0.0, 1.0]), np.array([10, 0]), np.array([0, 1]))
    assert np.isnan(out[0]) and np.isfinite(out[1])


def test_chi2params_validation():
    for p, d in ((0.0, 1), (1.0, 1), (0.5, 0)):
        with pytest.raises(NumericDomainError):
            Chi2Params(p, d)


def test_penalty_examples():
    assert penalty(0) == 0.0
    assert penalty(1, Chi2Params(0.95, 1)) == pytest.approx(3.841459, abs=1e-6)
    values = [penalty(k) for k in range(12)]
    assert values == sorted(values)
    with pytest.raises(ValueError):
        penalty(-1)


def test_type_pseudo_nis_examples():
    assert type_pseudo_nis([1, 1, 0], [1, 1, 0]) == (0.0, 3)
    value, dof = type_pseudo_nis([2], [1])
    assert (value, dof) == (pytest.approx(3.841459, abs=1e-6), 1)
    value, dof = type_pseudo_nis([0, 1, 2, 3], [0, 2, 2, 0])
    assert value == pytest.approx(2 * 3.841459, abs=1e-6) and dof == 4
    assert type_pseudo_nis([], []) is None
    # no boundary on the map counts as a mismatch
    assert type_pseudo_nis([1], [None])[0] == pytest.approx(CHI2_95_1)


@settings(max_examples=300, deadline=None)
@given(alpha=st.floats(1e-3, 1e3), da=st.integers(1, 40), db=st.integers(1, 40))
def test_mmq_dof_invariance(alpha, da, db):
    a = mmq(alpha * chi2inv(0.95, da), 0.0, Chi2Params(0.95, da))
    b = mmq(alpha * chi2inv(0.95, db), 0.0, Chi2Params(0.95, db))
    assert abs(a - b) < 1e-9


@settings(max_examples=200, deadline=None)
@given(x=st.floats(0.0, 1e4), y=st.floats(0.0, 1e4), pen=st.integers(0, 20), d=st.integers(1, 40))
def test_mmq_bounded_and_decreasing(x, y, pen, d):
    params = Chi2Params(0.95, d)
    lo, hi = sorted((x, y))
    a, b = mmq(lo, penalty(pen), params), mmq(hi, penalty(pen), params)
    assert -MMQ_CAP <= b <= a <= MMQ_CAP
    raw = lambda v: -math.log(max(v + penalty(pen), 1e-9) / chi2inv(0.95, d))
    assume(abs(raw(lo)) < MMQ_CAP and abs(raw(hi)) < MMQ_CAP and hi - lo > 1e-6 * max(hi, 1.0))
    assert a > b


def test_mmq_array_matches_scalar(rng):
    n = 500
    nis_v = rng.exponential(5.0, n)
    out = rng.integers(0, 4, n)
    dof = rng.integers(0, 11, n)
    vec = mmq_array(nis_v, out, dof)
    for i in range(n):
        ref = channel_mmq(float(nis_v[i]), int(out[i]), int(dof[i]))
        if ref is None:
            assert np.isnan(vec[i])
        else:
            assert vec[i] == pytest.approx(ref, abs=1e-12)
