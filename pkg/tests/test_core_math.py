import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cocodesk.core_math import (cosine_similarity, l2_norm, log_softmax, normalize_scale,
                                stable_softmax)
from cocodesk.errors import DimMismatch, ZeroNorm

# e/(e+1) evaluated with mpmath at 40 digits
SIGMOID_ONE = 0.7310585786300048792511592418218362743651

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
vectors = arrays(np.float64, st.integers(1, 12), elements=finite).filter(
    lambda v: np.linalg.norm(v) > 1e-6)


@pytest.mark.parametrize("v, expected", [([3, 4], 5.0), ([0, 0, 0], 0.0), ([1, 0, 0, 0], 1.0)])
def test_l2_norm(v, expected):
    assert l2_norm(v) == expected


def test_normalize_scale_examples():
    np.testing.assert_allclose(normalize_scale([3, 4], 1.0), [0.6, 0.8], atol=1e-15)
    np.testing.assert_allclose(normalize_scale([3, 4], 2.0), [1.2, 1.6], atol=1e-15)
    with pytest.raises(ZeroNorm):
        normalize_scale([0, 0], 1.0)


def test_cosine_examples():
    assert cosine_similarity([1, 0], [1, 0]) == 1.0
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity([1, 0], [-2, 0]) == -1.0
    with pytest.raises(ZeroNorm):
        cosine_similarity([0, 0], [1, 0])
    with pytest.raises(DimMismatch):
        cosine_similarity([1, 0], [1, 0, 0])


def test_softmax_examples():
    np.testing.assert_allclose(stable_softmax([0, 0, 0]), [1 / 3] * 3, atol=1e-15)
    p = stable_softmax([1000.0, 0.0])
    assert np.all(np.isfinite(p))
    np.testing.assert_allclose(p, [1.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(stable_softmax([1.0, 0.0]),
                               [SIGMOID_ONE, 1 - SIGMOID_ONE], atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(vectors, st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.data())
def test_cosine_scale_invariant_and_symmetric(u, a, b, data):
    v = data.draw(arrays(np.float64, u.shape, elements=finite).filter(
        lambda x: np.linalg.norm(x) > 1e-6))
    c = cosine_similarity(u, v)
    assert -1.0 <= c <= 1.0
    assert abs(cosine_similarity(a * u, b * v) - c) < 1e-12
    assert cosine_similarity(v, u) == pytest.approx(c, abs=1e-15)
    assert abs(cosine_similarity(u, u) - 1.0) < 1e-12


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e4, 1e4)),
       st.floats(-1e4, 1e4))
def test_softmax_sums_to_one_and_shift_invariant(z, c):
    p = stable_softmax(z)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) < 1e-12
    np.testing.assert_allclose(stable_softmax(z + c), p, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(vectors, st.floats(1e-3, 1e3))
def test_normalize_scale_norm(v, alpha):
    assert abs(l2_norm(normalize_scale(v, alpha)) - alpha) <= 1e-12 * alpha + 1e-15 * alpha


def test_log_softmax_matches_log_of_softmax():
    z = np.random.default_rng(0).normal(size=(5, 7)) * 10
    np.testing.assert_allclose(log_softmax(z), np.log(stable_softmax(z)), atol=1e-12)
