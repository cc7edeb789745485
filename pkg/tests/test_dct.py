import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from docseg import dct
from docseg.dct import (DctCoeffs, FeatureVector, TwoColorProjection, ac_energy, block_dct8,
                        code_length, feature_d1, feature_d2, two_color_project, weighted_norm)
from docseg.errors import GeometryError

# JPEG baseline scan order (ITU T.81 Figure A.6), as row-major indices
JPEG_ZIGZAG = [
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5,
    12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13, 6, 7, 14, 21, 28,
    35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51,
    58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63,
]


def dct_by_definition(tile):
    """Direct double sum, O(64^2) per tile."""
    out = np.zeros((8, 8))
    for u in range(8):
        for v in range(8):
            au = math.sqrt(1 / 8) if u == 0 else math.sqrt(2 / 8)
            av = math.sqrt(1 / 8) if v == 0 else math.sqrt(2 / 8)
            s = 0.0
            for x in range(8):
                for y in range(8):
                    s += (tile[x, y] * math.cos((2 * x + 1) * u * math.pi / 16)
                          * math.cos((2 * y + 1) * v * math.pi / 16))
            out[u, v] = au * av * s
    return out.ravel()[JPEG_ZIGZAG]


def test_zigzag_matches_jpeg_table():
    assert dct.ZIGZAG.tolist() == JPEG_ZIGZAG


def test_constant_tile_has_only_dc():
    c = block_dct8(np.full((8, 8), 37.0)).coeffs
    assert c[0] == pytest.approx(8 * 37, abs=1e-9)
    assert np.allclose(c[1:], 0, atol=1e-9)


def test_matches_definition(rng):
    for _ in range(20):
        t = rng.integers(0, 256, (8, 8)).astype(float)
        assert np.allclose(block_dct8(t).coeffs, dct_by_definition(t), atol=1e-9, rtol=0)


def test_wrong_tile_size():
    with pytest.raises(GeometryError):
        block_dct8(np.zeros((8, 7)))


def test_inverse_round_trip(rng):
    t = rng.integers(0, 256, (5, 8, 8)).astype(float)
    assert np.allclose(dct.idct8_batch(dct.dct8_batch(t)), t, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (8, 8), elements=st.floats(-300, 300)),
       arrays(np.float64, (8, 8), elements=st.floats(-300, 300)),
       st.floats(-3, 3), st.floats(-3, 3))
def test_linearity(x, y, a, b):
    lhs = block_dct8(a * x + b * y).coeffs
    rhs = a * block_dct8(x).coeffs + b * block_dct8(y).coeffs
    assert np.allclose(lhs, rhs, atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(arrays(np.uint8, (8, 8)))
def test_parseval(tile):
    c = block_dct8(tile).coeffs
    px = (tile.astype(float) ** 2).sum()
    assert (c ** 2).sum() == pytest.approx(px, rel=1e-6, abs=1e-9)


def test_ac_energy_examples():
    assert ac_energy(DctCoeffs(np.zeros(64))) == 0
    c = np.zeros(64)
    c[0], c[1], c[2] = 99.0, 3.0, 4.0
    assert ac_energy(DctCoeffs(c)) == 25.0


@settings(max_examples=50, deadline=None)
@given(arrays(np.uint8, (8, 8)), st.integers(-50, 50))
def test_ac_energy_is_64_times_variance_and_shift_invariant(tile, shift):
    t = tile.astype(float)
    e = ac_energy(block_dct8(t))
    var = t.var()  # population variance
    assert e == pytest.approx(64 * var, rel=1e-6, abs=1e-6)
    assert ac_energy(block_dct8(t + shift)) == pytest.approx(e, rel=1e-6, abs=1e-6)


def test_code_length_piecewise():
    assert code_length(0) == 0 and code_length(1) == 0 and code_length(-1) == 0
    assert code_length(0.5) == 0
    assert code_length(2) == 5
    assert code_length(-8) == 7
    assert code_length(1024) == 14


def test_d1_examples():
    assert feature_d1(DctCoeffs(np.zeros(64)), 0.0) == 0
    c = np.zeros(64)
    c[1] = 2.0
    assert feature_d1(DctCoeffs(c), 0.0) == 5 / 64
    # DC enters through its difference with the predecessor
    c[0] = 100.0
    assert feature_d1(DctCoeffs(c), 100.0) == 5 / 64
    assert feature_d1(DctCoeffs(c), 96.0) == pytest.approx((6 + 5) / 64)


def test_prev_dc_raster():
    coeffs = np.zeros((3, 64))
    coeffs[:, 0] = [10, 20, 30]
    assert dct.prev_dc_raster(coeffs).tolist() == [0, 10, 20]


def brute_two_means(values):
    """Best contiguous split of the sorted values (optimal 1-D 2-partition)."""
    v = np.sort(np.asarray(values, float))
    best = None
    for k in range(1, len(v)):
        a, b = v[:k], v[k:]
        sse = ((a - a.mean()) ** 2).sum() + ((b - b.mean()) ** 2).sum()
        if best is None or sse < best[0]:
            best = (sse, a.mean(), b.mean())
    return best[1], best[2]


def test_two_color_exact():
    t = np.array([0] * 32 + [255] * 32, dtype=float).reshape(8, 8)
    p = two_color_project(t)
    assert (p.theta1, p.theta2) == (0, 255)
    assert np.array_equal(p.projected, t.ravel())
    assert feature_d2(t, p) == 0


def test_two_color_constant():
    p = two_color_project(np.full((8, 8), 91.0))
    assert p.theta1 == p.theta2 == 91
    assert feature_d2(np.full((8, 8), 91.0), p) == 0


def test_two_color_48_16_matches_brute_force():
    vals = np.array([10] * 48 + [200] * 16, dtype=float)
    p = two_color_project(vals.reshape(8, 8))
    lo, hi = brute_two_means(vals)
    assert (p.theta1, p.theta2) == (lo, hi) == (10, 200)


def test_two_color_on_random_tiles_is_a_lloyd_fixpoint(rng):
    for _ in range(50):
        t = rng.integers(0, 256, (8, 8)).astype(float)
        p = two_color_project(t)
        assert p.theta1 <= p.theta2
        assert set(np.unique(p.projected)) <= {p.theta1, p.theta2}
        x = t.ravel()
        # means are those of the assignment, and re-assigning changes nothing
        assert p.theta1 == pytest.approx(x[p.assignments == 0].mean())
        if (p.assignments == 1).any():
            assert p.theta2 == pytest.approx(x[p.assignments == 1].mean())
        again = (np.abs(x - p.theta2) < np.abs(x - p.theta1)).astype(int)
        assert np.array_equal(again, p.assignments)
        assert p.iterations <= 64


def test_d2_fixed_assignment_oracle():
    t = np.zeros(64)
    t[17] = 30
    p = TwoColorProjection(0.0, 30.0, np.where(t > 0, 30.0, 0.0), (t > 0).astype(int))
    assert feature_d2(t.reshape(8, 8), p) == 0
    t2 = t.copy()
    t2[17] = 40
    oracle = sum((a - b) ** 2 for a, b in zip(t2, p.projected)) / (30.0 - 0.0) ** 2
    assert feature_d2(t2.reshape(8, 8), p) == pytest.approx(oracle)
    assert oracle == pytest.approx(100 / 900)


def test_d2_symmetric_under_label_swap(rng):
    t = rng.integers(0, 256, (8, 8)).astype(float)
    p = two_color_project(t)
    swapped = TwoColorProjection(p.theta2, p.theta1, p.projected, 1 - p.assignments)
    assert feature_d2(t, swapped) == pytest.approx(feature_d2(t, p))


def test_weighted_norm():
    assert weighted_norm(FeatureVector(1, 0)) == 1
    assert weighted_norm((0, 1)) == pytest.approx(3.8729833462, abs=1e-9)
    assert weighted_norm((3, 4)) == pytest.approx(math.sqrt(249), abs=1e-12)
    assert weighted_norm((0, 0)) == 0
    assert weighted_norm((0, 1), gamma=4) == 2


@given(st.floats(0, 1e3), st.floats(0, 1e3))
def test_weighted_norm_zero_iff_origin(d1, d2):
    assert (weighted_norm((d1, d2)) == 0) == (d1 == 0 and d2 == 0)


def test_jpeg_quant_table_q50_is_annex_k():
    q = dct.jpeg_quant_table(50)
    assert q[0] == 16 and q[1] == 11 and q[2] == 12
    q75 = dct.jpeg_quant_table(75)
    assert q75[0] == 8 and q75.min() >= 1
