"""Histogram block classifier with a gradient-count text check.

Each block's grey-level histogram is searched for modes (local maxima whose
surrounding window holds enough probability mass); the number of modes and
their masses decide the label through four ordered rules.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence

import numpy as np

from .errors import ConfigError, GeometryError
from .imaging import BlockLabel, LabelMap, LumaImage, tile_blocks
from .parallel import map_chunks
from .result import SegmentationResult

HIST_BLOCK = 16
LEVELS = 256


@dataclass
class HistThresholds:
    t1: float = 30.0
    t2: float = 45.0
    t3: float = 70.0
    mode_t: float = 0.05
    a_window: int = 4

    def __post_init__(self):
        if min(self.t1, self.t2, self.t3, self.mode_t) < 0 or self.a_window < 0:
            raise ConfigError("histogram thresholds must be non-negative")
        if int(self.a_window) != self.a_window:
            raise ConfigError("a_window must be an integer")
        self.a_window = int(self.a_window)


@dataclass
class GradientThresholds:
    t1: int = 50
    t2: int = 45
    t3: int = 10
    t4: int = 4
    g_lo: float = 8.0
    g_hi: float = 64.0

    def __post_init__(self):
        if min(self.t1, self.t2, self.t3) < 0 or self.t4 < 1:
            raise ConfigError("gradient pixel thresholds must be >= 0 and t4 >= 1")
        if not 0 <= self.g_lo <= self.g_hi:
            raise ConfigError("need 0 <= g_lo <= g_hi")


@dataclass
class BlockHistogram:
    probs: np.ndarray
    block_size: int


@dataclass
class Mode:
    intensity: int
    cum_prob: float
    window: int


def _as_square_tiles(tiles) -> np.ndarray:
    t = np.asarray(tiles)
    if t.ndim == 2:
        t = t[None]
    if t.ndim != 3 or t.shape[1] != t.shape[2]:
        raise GeometryError(f"expected square tiles, got shape {t.shape}")
    return t


def histogram_counts(tiles) -> np.ndarray:
    """Integer grey-level counts, shape ``(n, 256)``."""
    t = _as_square_tiles(tiles).astype(np.int64)
    n = len(t)
    flat = t.reshape(n, -1) + (LEVELS * np.arange(n))[:, None]
    return np.bincount(flat.ravel(), minlength=LEVELS * n).reshape(n, LEVELS)


def block_histogram(tile, block_size: Optional[int] = None) -> BlockHistogram:
    t = np.asarray(tile)
    b = t.shape[0] if block_size is None else block_size
    if t.shape != (b, b):
        raise GeometryError(f"expected a {b}x{b} tile, got {t.shape}")
    counts = histogram_counts(t)[0]
    return BlockHistogram(counts / float(b * b), b)


# ---------------------------------------------------------------------------
# modes


def _min_window_count(mode_t: float, npix: int) -> int:
    """Smallest integer count ``w`` with ``w / npix >= mode_t``."""
    w = max(int(np.ceil(mode_t * npix)), 0)
    while w > 0 and (w - 1) / npix >= mode_t:
        w -= 1
    while w / npix < mode_t:
        w += 1
    return w


def detect_modes_counts(counts: np.ndarray, npix: int, mode_t: float, a_window: int,
                        max_modes: Optional[int] = None):
    """Vectorised mode search over ``(n, 256)`` integer histograms.

    Returns ``(intensity, window_count, n_modes)``; the first two are
    ``(n, K)`` arrays sorted by window mass (descending) and padded with -1 / 0.
    """
    counts = np.asarray(counts, dtype=np.int32)
    n = len(counts)
    cand = counts > 0
    cand[:, 1:] &= counts[:, 1:] >= counts[:, :-1]
    cand[:, :-1] &= counts[:, :-1] >= counts[:, 1:]

    # window sums from a cumulative sum padded so every window is a plain slice
    a = a_window
    cs = np.zeros((n, LEVELS + 2 * a + 1), dtype=np.int32)
    np.cumsum(counts, axis=1, out=cs[:, a + 1 : a + 1 + LEVELS])
    cs[:, a + 1 + LEVELS :] = cs[:, a + LEVELS : a + 1 + LEVELS]
    win = cs[:, 2 * a + 1 :] - cs[:, :LEVELS]
    accepted = cand & (win >= _min_window_count(mode_t, npix))
    idx = np.arange(LEVELS)

    limit = max_modes or LEVELS
    n_acc = accepted.sum(axis=1)
    width = int(min(n_acc.max(initial=0), limit))
    intens = np.full((n, width), -1, dtype=np.int64)
    mass = np.zeros((n, width), dtype=np.int64)
    if width == 0:
        return intens, mass, np.zeros(n, dtype=np.int64)

    # one accepted candidate needs no suppression
    single = n_acc == 1
    if single.any():
        p = np.argmax(accepted[single], axis=1)
        intens[single, 0] = p
        mass[single, 0] = win[single, p]

    multi = np.flatnonzero(n_acc > 1)
    score = np.where(accepted[multi], win[multi], -1)
    rows = np.arange(len(multi))
    for k in range(width):
        if not len(multi):
            break
        p = np.argmax(score, axis=1)
        best = score[rows, p]
        ok = best >= 0
        if not ok.any():
            break
        intens[multi[ok], k] = p[ok]
        mass[multi[ok], k] = best[ok]
        near = np.abs(idx[None, :] - p[:, None]) <= 2 * a_window
        score[near & ok[:, None]] = -1
    return intens, mass, (intens >= 0).sum(axis=1)


def detect_modes(h: BlockHistogram, th: HistThresholds) -> List[Mode]:
    npix = h.block_size * h.block_size
    counts = np.rint(np.asarray(h.probs) * npix).astype(np.int64)[None]
    intens, mass, nm = detect_modes_counts(counts, npix, th.mode_t, th.a_window)
    return [Mode(int(intens[0, k]), mass[0, k] / npix, th.a_window) for k in range(nm[0])]


# ---------------------------------------------------------------------------
# rules


def _rules(n_modes: np.ndarray, top4_pct: np.ndarray, th: HistThresholds) -> np.ndarray:
    """Ordered rule table on mode counts and the four largest masses (percent)."""
    c1, c2 = top4_pct[:, 0], top4_pct[:, 1]
    s2 = c1 + c2
    s4 = top4_pct.sum(axis=1)
    out = np.full(len(n_modes), int(BlockLabel.PICTURE), dtype=np.uint8)
    done = np.zeros(len(n_modes), dtype=bool)
    for hit, lab in (
        ((n_modes == 1) & (c1 > th.t1), BlockLabel.BACKGROUND),
        ((n_modes == 2) & (s2 > th.t1) & (np.abs(c1 - c2) > th.t2), BlockLabel.TEXT),
        ((n_modes <= 4) & (s4 > th.t1), BlockLabel.GRAPHICS),
        ((n_modes > 4) & (s4 < th.t3), BlockLabel.PICTURE),
    ):
        fire = hit & ~done
        out[fire] = int(lab)
        done |= fire
    return out


def apply_decision_rules(modes: Sequence[Mode], th: HistThresholds) -> BlockLabel:
    """First matching rule wins; no match falls back to Picture."""
    c = sorted((m.cum_prob for m in modes), reverse=True)
    top = np.zeros((1, 4))
    for k, v in enumerate(c[:4]):
        top[0, k] = v * 100.0
    return BlockLabel(int(_rules(np.array([len(c)]), top, th)[0]))


# ---------------------------------------------------------------------------
# gradient check


def gradient_stats(tiles, gth: GradientThresholds):
    """Per-tile ``(low, high, colour_levels)`` counts."""
    t = _as_square_tiles(tiles).astype(np.int16)
    g = np.zeros(t.shape, dtype=np.int16)
    dy = np.abs(np.diff(t, axis=1))
    dx = np.abs(np.diff(t, axis=2))
    g[:, 1:, :] = np.maximum(g[:, 1:, :], dy)
    g[:, :-1, :] = np.maximum(g[:, :-1, :], dy)
    g[:, :, 1:] = np.maximum(g[:, :, 1:], dx)
    g[:, :, :-1] = np.maximum(g[:, :, :-1], dx)
    n = len(t)
    low_mask = g <= gth.g_lo
    low = low_mask.reshape(n, -1).sum(axis=1)
    high = ((g >= gth.g_hi) & ~low_mask).reshape(n, -1).sum(axis=1)
    q = (t // 16).reshape(n, -1) + (16 * np.arange(n))[:, None]
    levels = (np.bincount(q.ravel(), minlength=16 * n).reshape(n, 16) > 0).sum(axis=1)
    return low, high, levels


def _gradient_rule(low, high, levels, gth: GradientThresholds) -> np.ndarray:
    text = ((high + low) >= gth.t1) & (high < gth.t2) & (low > gth.t3) & (levels < gth.t4)
    return np.where(text, int(BlockLabel.TEXT), int(BlockLabel.PICTURE)).astype(np.uint8)


def gradient_classify(tile, gth: Optional[GradientThresholds] = None) -> BlockLabel:
    """Text if the block has few strong edges, enough flat pixels and few grey tones."""
    gth = gth or GradientThresholds()
    low, high, levels = gradient_stats(tile, gth)
    return BlockLabel(int(_gradient_rule(low, high, levels, gth)[0]))


# ---------------------------------------------------------------------------
# pipeline


def _classify_tiles(tiles: np.ndarray, th: HistThresholds, gth: GradientThresholds,
                    use_gradient: bool):
    npix = tiles.shape[1] * tiles.shape[2]
    counts = histogram_counts(tiles)
    # five picks are enough to tell N > 4 apart from N <= 4
    _, mass, nm = detect_modes_counts(counts, npix, th.mode_t, th.a_window, max_modes=5)
    top4 = np.zeros((len(tiles), 4))
    k = min(4, mass.shape[1])
    top4[:, :k] = mass[:, :k] * (100.0 / npix)
    labels = _rules(nm, top4, th)
    if use_gradient:
        retest = (labels == BlockLabel.GRAPHICS) | (labels == BlockLabel.PICTURE)
        if retest.any():
            low, high, lev = gradient_stats(tiles[retest], gth)
            labels[retest] = _gradient_rule(low, high, lev, gth)
    return labels, nm


def run_hist_pipeline(img: LumaImage, th: Optional[HistThresholds] = None,
                      gth: Optional[GradientThresholds] = None, use_gradient: bool = True,
                      block_size: int = HIST_BLOCK,
                      workers: Optional[int] = None) -> SegmentationResult:
    """Segment a page into Background / Text / Graphics / Picture blocks."""
    th = th or HistThresholds()
    gth = gth or GradientThresholds()
    timings = {}
    t0 = time.perf_counter()

    t = time.perf_counter()
    grid = tile_blocks(img, block_size)
    tiles = grid.flat()
    timings["tile"] = time.perf_counter() - t

    t = time.perf_counter()
    labels, nm = map_chunks(lambda b: _classify_tiles(b, th, gth, use_gradient), tiles, workers)
    timings["classify"] = time.perf_counter() - t
    timings["total"] = time.perf_counter() - t0

    lmap = LabelMap(grid.rows, grid.cols, grid.block_size, labels, img.width, img.height)
    config = {
        "pipeline": "hist",
        "hist": {**asdict(th), "use_gradient": bool(use_gradient), "block_size": int(block_size)},
        "grad": asdict(gth),
    }
    info = {"mode_counts_capped_at_5": np.bincount(np.minimum(nm, 5), minlength=6).tolist()}
    return SegmentationResult("hist", lmap, None, timings, config, info)
