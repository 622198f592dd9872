import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qpdcv.numerics import (
    ONE,
    SignedLog,
    as_symmetric,
    derive_stream,
    elementary_symmetric,
    log_sum_exp,
    slog_mul,
    sym_pseudoinverse,
)


def test_slog_mul_examples():
    out = slog_mul([SignedLog(1, math.log(2)), SignedLog(-1, math.log(3))])
    assert out.sign == -1 and out.log_magnitude == pytest.approx(math.log(6))
    assert slog_mul([]) == ONE
    big = slog_mul([SignedLog(1, 0.001)] * 6000)
    assert big.sign == 1 and big.log_magnitude == pytest.approx(6.0, rel=1e-12)


def test_slog_mul_zero_factor():
    assert slog_mul([SignedLog(1, 3.0), SignedLog.from_real(0.0), SignedLog(-1, 1.0)]).sign == 0


@settings(max_examples=200)
@given(st.lists(st.floats(min_value=-50, max_value=50).filter(lambda v: abs(v) > 1e-3), min_size=1, max_size=30))
def test_slog_mul_matches_direct_product(values):
    got = slog_mul(SignedLog.from_real(v) for v in values).to_real()
    assert got == pytest.approx(math.prod(values), rel=1e-10)


@given(st.floats(allow_nan=False, allow_infinity=False).filter(lambda v: v == 0 or 1e-300 < abs(v) < 1e300))
def test_round_trip(x):
    assert SignedLog.from_real(x).to_real() == pytest.approx(x, rel=1e-12, abs=0)


def test_zero_sign_ignores_magnitude():
    assert SignedLog(0, 123.0).to_real() == 0.0
    with pytest.raises(ValueError):
        SignedLog(2, 0.0)


def test_log_sum_exp_examples():
    out = log_sum_exp([SignedLog(1, 700.0), SignedLog(1, 700.0)])
    assert out.sign == 1 and out.log_magnitude == pytest.approx(700 + math.log(2))
    assert log_sum_exp([SignedLog(1, 3.0), SignedLog(-1, 3.0)]).sign == 0
    out = log_sum_exp([SignedLog.from_real(v) for v in (1.0, 2.0, 3.0)])
    assert out.log_magnitude == pytest.approx(math.log(6))
    assert log_sum_exp([]).sign == 0


@settings(max_examples=200)
@given(st.lists(st.floats(min_value=-1e3, max_value=1e3), min_size=1, max_size=20))
def test_log_sum_exp_matches_direct_sum(values):
    total = math.fsum(values)
    got = log_sum_exp([SignedLog.from_real(v) for v in values]).to_real()
    scale = max(abs(v) for v in values) or 1.0
    assert abs(got - total) <= 1e-9 * scale


def test_pinv_examples():
    np.testing.assert_allclose(sym_pseudoinverse(np.diag([2.0, 0.0])), np.diag([0.5, 0.0]))
    np.testing.assert_allclose(sym_pseudoinverse(np.eye(4)), np.eye(4), atol=1e-14)


@pytest.mark.parametrize("rank", [1, 3, 5])
def test_pinv_penrose_identities(rank):
    rng = np.random.default_rng(rank)
    a = rng.standard_normal((5, rank))
    k = a @ a.T
    kp = sym_pseudoinverse(k)
    fro = np.linalg.norm
    assert fro(k @ kp @ k - k) <= 1e-9 * fro(k)
    assert fro(kp @ k @ kp - kp) <= 1e-9 * fro(kp)
    assert np.array_equal(kp, kp.T)


def test_pinv_rejects_bad_input():
    with pytest.raises(ValueError):
        as_symmetric([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        sym_pseudoinverse(np.eye(2), rel_tol=0.0)


def test_as_symmetric_is_exact():
    a = np.array([[1.0, 0.3], [0.3 + 1e-16, 2.0]])
    s = as_symmetric(a, atol=1e-12)
    assert s[0, 1] == s[1, 0]


def test_elementary_symmetric_examples():
    np.testing.assert_array_equal(elementary_symmetric([1, 1]), [1, 2, 1])
    np.testing.assert_array_equal(elementary_symmetric([1, -1]), [1, 0, -1])
    np.testing.assert_array_equal(elementary_symmetric([2, 3, 4]), [1, 9, 26, 24])


@pytest.mark.parametrize("q", range(1, 11))
def test_elementary_symmetric_brute_force(q):
    rng = np.random.default_rng(q)
    vals = rng.standard_normal(q)
    expect = [sum(math.prod(c) for c in itertools.combinations(vals, k)) for k in range(q + 1)]
    np.testing.assert_allclose(elementary_symmetric(vals), expect, rtol=1e-10, atol=1e-12)


def test_elementary_symmetric_batched():
    rng = np.random.default_rng(0)
    vals = rng.standard_normal((3, 4, 5))
    out = elementary_symmetric(vals)
    assert out.shape == (3, 4, 6)
    np.testing.assert_allclose(out[1, 2], elementary_symmetric(vals[1, 2]))


def test_streams_deterministic_and_distinct():
    a = derive_stream(42, ("inst", 3)).random(100)
    b = derive_stream(42, ("inst", 3)).random(100)
    c = derive_stream(42, ("inst", 4)).random(100)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, derive_stream(43, ("inst", 3)).random(100))


def test_stream_uniformity():
    n = 10**6
    u = derive_stream(7, ("uniform",)).random(n)
    assert abs(u.mean() - 0.5) < 3 / math.sqrt(n)


def test_stream_rejects_negative_label():
    with pytest.raises(ValueError):
        derive_stream(1, (-1,))
