"""8x8 block DCT and the per-block features used by the AC-coefficient pipeline.

Every function has a single-block form (taking one tile or one coefficient
vector) and a vectorised ``*_batch`` form operating on ``(n, ...)`` stacks;
the pipelines use the batch forms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import GeometryError

DEFAULT_GAMMA = 15.0


def _zigzag_order(n: int = 8) -> np.ndarray:
    cells = [(r, c) for r in range(n) for c in range(n)]
    cells.sort(key=lambda rc: (rc[0] + rc[1], -rc[0] if (rc[0] + rc[1]) % 2 == 0 else rc[0]))
    return np.array([r * n + c for r, c in cells])


# ZIGZAG[k] is the row-major index of the k-th coefficient in scan order
ZIGZAG = _zigzag_order()
UNZIGZAG = np.argsort(ZIGZAG)


def _dct_matrix(n: int = 8) -> np.ndarray:
    k = np.arange(n)[:, None]
    x = np.arange(n)[None, :]
    m = np.cos((2 * x + 1) * k * np.pi / (2 * n)) * math.sqrt(2.0 / n)
    m[0, :] = math.sqrt(1.0 / n)
    return m


DCT8 = _dct_matrix()

# ITU T.81 Annex K luminance table, row-major
JPEG_LUMA_Q50 = np.array(
    [
        16, 11, 10, 16, 24, 40, 51, 61,
        12, 12, 14, 19, 26, 58, 60, 55,
        14, 13, 16, 24, 40, 57, 69, 56,
        14, 17, 22, 29, 51, 87, 80, 62,
        18, 22, 37, 56, 68, 109, 103, 77,
        24, 35, 55, 64, 81, 104, 113, 92,
        49, 64, 78, 87, 103, 121, 120, 101,
        72, 92, 95, 98, 112, 100, 103, 99,
    ],
    dtype=np.float64,
)


def jpeg_quant_table(quality: int = 75) -> np.ndarray:
    """IJG-scaled luminance quantisation table, returned in zig-zag order."""
    if not 1 <= quality <= 100:
        raise ValueError("quality must be in 1..100")
    scale = 5000 / quality if quality < 50 else 200 - 2 * quality
    q = np.floor((JPEG_LUMA_Q50 * scale + 50) / 100)
    q = np.clip(q, 1, 255)
    return q[ZIGZAG]


@dataclass
class DctCoeffs:
    coeffs: np.ndarray  # 64 values, zig-zag order, index 0 is DC

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64).ravel()
        if self.coeffs.size != 64:
            raise GeometryError(f"expected 64 coefficients, got {self.coeffs.size}")

    @property
    def dc(self) -> float:
        return float(self.coeffs[0])

    def to_matrix(self) -> np.ndarray:
        """Coefficients back in 8x8 frequency layout."""
        return self.coeffs[UNZIGZAG].reshape(8, 8)


@dataclass
class TwoColorProjection:
    theta1: float
    theta2: float
    projected: np.ndarray
    assignments: np.ndarray  # 0 -> theta1, 1 -> theta2
    iterations: int = 0


@dataclass
class FeatureVector:
    d1: float
    d2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.d1, self.d2])


def _as_tiles(tiles, size: int = 8) -> np.ndarray:
    arr = np.asarray(tiles, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.shape[-2:] != (size, size):
        raise GeometryError(f"expected {size}x{size} tiles, got {arr.shape[-2:]}")
    return arr


# ---------------------------------------------------------------------------
# transform


def dct8_batch(tiles) -> np.ndarray:
    """Orthonormal 2-D DCT-II of ``(n, 8, 8)`` tiles; returns ``(n, 64)`` zig-zag."""
    t = _as_tiles(tiles)
    freq = DCT8 @ t @ DCT8.T
    return freq.reshape(len(t), 64)[:, ZIGZAG]


def idct8_batch(coeffs) -> np.ndarray:
    c = np.asarray(coeffs, dtype=np.float64).reshape(-1, 64)
    freq = c[:, UNZIGZAG].reshape(-1, 8, 8)
    return DCT8.T @ freq @ DCT8


def block_dct8(tile) -> DctCoeffs:
    arr = np.asarray(tile)
    if arr.shape != (8, 8):
        raise GeometryError(f"block_dct8 needs an 8x8 tile, got {arr.shape}")
    return DctCoeffs(dct8_batch(arr)[0])


def quantize_batch(coeffs: np.ndarray, quality: int = 75) -> np.ndarray:
    """Quantise then dequantise, as a JPEG round trip would."""
    q = jpeg_quant_table(quality)
    return np.round(coeffs / q) * q


def decompress_batch(coeffs: np.ndarray) -> np.ndarray:
    """Pixels a baseline decoder would reconstruct from (dequantised) coefficients."""
    return np.clip(np.round(idct8_batch(coeffs)), 0, 255)


# ---------------------------------------------------------------------------
# energy and code-length features


def ac_energy_batch(coeffs: np.ndarray) -> np.ndarray:
    c = np.asarray(coeffs, dtype=np.float64).reshape(-1, 64)
    return np.einsum("ij,ij->i", c[:, 1:], c[:, 1:])


def ac_energy(c: DctCoeffs) -> float:
    return float(ac_energy_batch(c.coeffs)[0])


def code_length(x):
    """Approximate entropy-coded bit length of a coefficient (0 when ``|x| <= 1``)."""
    a = np.abs(np.asarray(x, dtype=np.float64))
    big = a > 1
    out = np.zeros_like(a)
    out[big] = np.log2(a[big]) + 4.0
    return out if out.ndim else float(out)


def prev_dc_raster(coeffs: np.ndarray) -> np.ndarray:
    """DC of each block's raster-order predecessor (0 for the first block)."""
    dc = np.asarray(coeffs).reshape(-1, 64)[:, 0]
    prev = np.empty_like(dc)
    prev[0] = 0.0
    prev[1:] = dc[:-1]
    return prev


def d1_batch(coeffs: np.ndarray, prev_dc: np.ndarray) -> np.ndarray:
    c = np.asarray(coeffs, dtype=np.float64).reshape(-1, 64)
    dc_term = code_length(c[:, 0] - prev_dc)
    return (dc_term + code_length(c[:, 1:]).sum(axis=1)) / 64.0


def feature_d1(c: DctCoeffs, prev_dc: float = 0.0) -> float:
    return float(d1_batch(c.coeffs, np.array([prev_dc]))[0])


# ---------------------------------------------------------------------------
# two-colour projection


def two_color_batch(tiles, max_iter: int = 64):
    """1-D 2-means per tile, initialised at the tile minimum and maximum.

    Returns ``(theta1, theta2, assignments, iterations)`` where assignments
    has shape ``(n, pixels)`` and each row is a fixpoint of the Lloyd step.
    A pixel equidistant from both means goes to the lower one.
    """
    x = np.asarray(tiles, dtype=np.float64)
    x = x.reshape(len(x), -1)
    lo = x.min(axis=1)
    hi = x.max(axis=1)
    assign = np.zeros(x.shape, dtype=np.int8)
    iters = 0
    active = np.ones(len(x), dtype=bool)
    while iters < max_iter and active.any():
        iters += 1
        xa = x[active]
        t1 = lo[active][:, None]
        t2 = hi[active][:, None]
        new = (np.abs(xa - t2) < np.abs(xa - t1)).astype(np.int8)
        changed = (new != assign[active]).any(axis=1)
        assign[active] = new
        n2 = new.sum(axis=1)
        n1 = new.shape[1] - n2
        s2 = (xa * new).sum(axis=1)
        s1 = xa.sum(axis=1) - s2
        m1 = np.where(n1 > 0, s1 / np.maximum(n1, 1), lo[active])
        m2 = np.where(n2 > 0, s2 / np.maximum(n2, 1), m1)
        moved = (m1 != lo[active]) | (m2 != hi[active])
        lo[active] = m1
        hi[active] = m2
        idx = np.flatnonzero(active)
        active[idx[~(changed | moved)]] = False
    return lo, hi, assign, iters


def two_color_project(tile, seed: Optional[int] = None) -> TwoColorProjection:
    """Project an 8x8 tile onto its two k-means luminance levels.

    ``seed`` is accepted for API symmetry with the other clustering calls;
    min/max initialisation makes the result deterministic regardless.
    """
    t = _as_tiles(tile)
    if len(t) != 1:
        raise GeometryError("two_color_project takes a single tile")
    th1, th2, assign, iters = two_color_batch(t)
    a = assign[0]
    proj = np.where(a == 1, th2[0], th1[0])
    return TwoColorProjection(float(th1[0]), float(th2[0]), proj, a.copy(), iters)


def d2_batch(tiles, theta1, theta2, assign) -> np.ndarray:
    x = np.asarray(tiles, dtype=np.float64).reshape(len(theta1), -1)
    proj = np.where(assign == 1, theta2[:, None], theta1[:, None])
    err = ((x - proj) ** 2).sum(axis=1)
    gap = (theta1 - theta2) ** 2
    out = np.zeros_like(err)
    nz = gap > 0
    out[nz] = err[nz] / gap[nz]
    return out


def feature_d2(tile, proj: TwoColorProjection) -> float:
    x = np.asarray(tile, dtype=np.float64).ravel()
    if proj.theta1 == proj.theta2:
        return 0.0
    err = float(((x - np.asarray(proj.projected, dtype=np.float64).ravel()) ** 2).sum())
    return err / (proj.theta1 - proj.theta2) ** 2


def weighted_norm(v, gamma: float = DEFAULT_GAMMA) -> float:
    """``sqrt(d1**2 + gamma * d2**2)``; accepts a FeatureVector or a pair."""
    if isinstance(v, FeatureVector):
        d1, d2 = v.d1, v.d2
    else:
        d1, d2 = v
    return math.hypot(d1, math.sqrt(gamma) * d2)
