import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from headpose.codec import BinGrid, DEFAULT_GRID, decode, encode, one_hot, softmax


def test_grid_constants():
    g = DEFAULT_GRID
    assert g.num_bins == 62
    assert g.lo == -93.0 and g.hi == 93.0
    assert g.width == 3.0
    np.testing.assert_allclose(g.centers[0], -91.5)
    np.testing.assert_allclose(g.centers[-1], 91.5)
    np.testing.assert_allclose(np.diff(g.centers), 3.0)


def test_encode_boundaries():
    assert encode(-93.0) == 0
    assert encode(0.0) == 31
    assert encode(95.0) == 61
    assert encode(93.0) == 61  # exact upper edge clamps into the last bin
    assert encode(-200.0) == 0


def test_encode_nan_rejected():
    with pytest.raises(ValueError):
        encode(float("nan"))


def test_decode_one_hot():
    assert decode(one_hot(31)) == pytest.approx(1.5)


def test_decode_uniform_is_zero():
    assert decode(np.full(62, 1 / 62)) == pytest.approx(0.0, abs=1e-12)


def test_decode_symmetric_extremes():
    p = np.zeros(62)
    p[0] = p[61] = 0.5
    assert decode(p) == pytest.approx(0.0, abs=1e-12)


def test_decode_rejects_unnormalized():
    with pytest.raises(ValueError):
        decode(np.full(62, 0.5))


def test_softmax_uniform_and_stability():
    np.testing.assert_allclose(softmax(np.zeros(62)), 1 / 62)
    z = np.zeros(62)
    z[0] = 1000.0
    p = softmax(z)
    assert np.isfinite(p).all()
    assert p[0] == pytest.approx(1.0)
    assert p.sum() == pytest.approx(1.0)


@given(st.floats(min_value=-500, max_value=500, allow_nan=False))
def test_softmax_shift_invariance(c):
    rng = np.random.default_rng(3)
    z = rng.normal(size=62)
    np.testing.assert_allclose(softmax(z), softmax(z + c), atol=1e-12)


@given(st.floats(min_value=-93.0, max_value=92.999, allow_nan=False))
def test_roundtrip_within_half_bin(angle):
    back = decode(one_hot(encode(angle)))
    assert abs(back - angle) <= 1.5 + 1e-9


@given(
    st.floats(min_value=-120, max_value=120, allow_nan=False),
    st.floats(min_value=-120, max_value=120, allow_nan=False),
)
def test_encode_monotone(a, b):
    lo, hi = sorted((a, b))
    assert encode(lo) <= encode(hi)


def test_decode_linear_in_distribution():
    rng = np.random.default_rng(4)
    p = softmax(rng.normal(size=62))
    q = softmax(rng.normal(size=62))
    for alpha in (0.0, 0.25, 0.5, 0.9, 1.0):
        mix = alpha * p + (1 - alpha) * q
        assert decode(mix) == pytest.approx(
            alpha * decode(p) + (1 - alpha) * decode(q), abs=1e-9
        )


def test_grid_width_consistency():
    g = BinGrid(num_bins=10, lo=-5, hi=5)
    assert g.width == 1.0
    assert math.isclose(g.hi - g.lo, g.num_bins * g.width)
