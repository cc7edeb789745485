"""AC-coefficient block classifier.

Flat blocks are separated by AC energy, the remaining blocks are described
by a code-length feature and a two-colour fit, clustered into two groups
and the groups are named Text or Picture.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from . import dct
from .errors import ConfigError, GeometryError
from .imaging import BlockLabel, LabelMap, LumaImage, tile_blocks
from .parallel import map_chunks
from .result import SegmentationResult

AC_BLOCK = 8


@dataclass
class AcThresholds:
    t1: float = 20.0
    t2: float = 70.0
    gamma: float = dct.DEFAULT_GAMMA

    def __post_init__(self):
        if not 0 <= self.t1 <= self.t2:
            raise ConfigError(f"need 0 <= t1 <= t2, got t1={self.t1} t2={self.t2}")
        if self.gamma <= 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")


@dataclass
class ClusterModel:
    centroids: np.ndarray  # (k, 2) in (d1, d2) units
    labels: np.ndarray  # cluster id per input vector
    mean_d1: np.ndarray
    mean_d2: np.ndarray
    degenerate: bool = False
    iterations: int = 0
    objective: List[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.centroids)

    @property
    def member_ids(self) -> List[np.ndarray]:
        return [np.flatnonzero(self.labels == j) for j in range(self.k)]


# ---------------------------------------------------------------------------
# background separation


def _neighbour_counts(mask: np.ndarray) -> np.ndarray:
    p = np.pad(mask.astype(np.int32), 1)
    r, c = mask.shape
    total = np.zeros((r, c), dtype=np.int32)
    for dy in (0, 1, 2):
        for dx in (0, 1, 2):
            if dy == 1 and dx == 1:
                continue
            total += p[dy : dy + r, dx : dx + c]
    return total


def classify_smoothness(energies: np.ndarray, th: AcThresholds) -> np.ndarray:
    """Return a boolean grid, True where a block is smooth (background).

    Energies below ``t1`` are smooth and those at or above ``t2`` are not.
    Blocks in between take the majority of their decided 8-neighbours,
    with ties going to non-smooth.
    """
    e = np.asarray(energies, dtype=np.float64)
    if e.ndim == 1:
        e = e[None, :]
    if e.size == 0:
        raise GeometryError("empty block grid")
    smooth = e < th.t1
    rough = e >= th.t2
    pending = ~smooth & ~rough
    if pending.any():
        ns = _neighbour_counts(smooth)
        nr = _neighbour_counts(rough)
        smooth = smooth | (pending & (ns > nr))
    return smooth


# ---------------------------------------------------------------------------
# clustering


def _as_features(features) -> np.ndarray:
    if len(features) and isinstance(features[0], dct.FeatureVector):
        return np.array([[f.d1, f.d2] for f in features], dtype=np.float64)
    return np.asarray(features, dtype=np.float64).reshape(-1, 2)


def _degenerate(x: np.ndarray) -> ClusterModel:
    centre = x.mean(axis=0) if len(x) else np.zeros(2)
    return ClusterModel(
        centroids=centre[None, :],
        labels=np.zeros(len(x), dtype=np.int64),
        mean_d1=centre[:1].copy(),
        mean_d2=centre[1:].copy(),
        degenerate=True,
    )


def kmeans_features(features, gamma: float = dct.DEFAULT_GAMMA, seed: int = 0,
                    max_iter: int = 100) -> ClusterModel:
    """Two-cluster Lloyd iteration under the gamma-weighted feature norm.

    Clusters are returned with the lower mean d2 first (then the higher d1),
    so the output does not depend on which seed point was drawn first.
    """
    x = _as_features(features)
    if len(x) < 2:
        return _degenerate(x)
    scale = np.array([1.0, np.sqrt(gamma)])
    z = x * scale
    if np.all(z == z[0]):
        return _degenerate(x)

    rng = np.random.default_rng(seed)
    first = int(rng.integers(len(z)))
    d = ((z - z[first]) ** 2).sum(axis=1)
    second = int(np.argmax(d))
    cent = np.stack([z[first], z[second]])

    labels = np.full(len(z), -1, dtype=np.int64)
    objective = []
    it = 0
    for it in range(1, max_iter + 1):
        dist = ((z[:, None, :] - cent[None, :, :]) ** 2).sum(axis=2)
        new = np.argmin(dist, axis=1)
        objective.append(float(dist[np.arange(len(z)), new].sum()))
        if np.array_equal(new, labels):
            break
        labels = new
        for j in range(2):
            members = labels == j
            if members.any():
                cent[j] = z[members].mean(axis=0)
    if np.unique(labels).size < 2:
        return _degenerate(x)

    raw = cent / scale
    order = sorted(range(2), key=lambda j: (raw[j, 1], -raw[j, 0], j))
    remap = np.empty(2, dtype=np.int64)
    remap[order] = np.arange(2)
    labels = remap[labels]
    raw = raw[order]
    return ClusterModel(
        centroids=raw,
        labels=labels,
        mean_d1=raw[:, 0].copy(),
        mean_d2=raw[:, 1].copy(),
        degenerate=False,
        iterations=it,
        objective=objective,
    )


def assign_text_picture(cm: ClusterModel, d2_gate: Optional[float] = 1.0) -> List[BlockLabel]:
    """Name each cluster Text or Picture.

    A cluster with higher mean d1 and lower mean d2 than the other is Text.
    Without such dominance the larger ``d1 / (1 + d2)`` wins (ties to the
    larger d1). When ``d2_gate`` is set and both cluster means fall on the
    same side of it, both clusters get the single-cluster verdict instead:
    a page with only text, or only pictures, still yields one class.
    """
    if cm.degenerate or cm.k == 1:
        gate = 1.0 if d2_gate is None else d2_gate
        return [BlockLabel.TEXT if cm.mean_d2[0] < gate else BlockLabel.PICTURE]
    d1, d2 = cm.mean_d1, cm.mean_d2
    if d2_gate is not None:
        below = d2 < d2_gate
        if below.all():
            return [BlockLabel.TEXT, BlockLabel.TEXT]
        if not below.any():
            return [BlockLabel.PICTURE, BlockLabel.PICTURE]
    if d1[0] > d1[1] and d2[0] < d2[1]:
        text = 0
    elif d1[1] > d1[0] and d2[1] < d2[0]:
        text = 1
    else:
        s = d1 / (1.0 + d2)
        if s[0] != s[1]:
            text = int(np.argmax(s))
        else:
            text = 0 if d1[0] >= d1[1] else 1
    out = [BlockLabel.PICTURE, BlockLabel.PICTURE]
    out[text] = BlockLabel.TEXT
    return out


# ---------------------------------------------------------------------------
# pipeline


def _coeff_stage(tiles: np.ndarray, jpeg_quant: bool, quality: int):
    c = dct.dct8_batch(tiles)
    if jpeg_quant:
        c = dct.quantize_batch(c, quality)
    return c, dct.ac_energy_batch(c)


def _two_color_stage(tiles: np.ndarray):
    th1, th2, assign, _ = dct.two_color_batch(tiles)
    return dct.d2_batch(tiles, th1, th2, assign)


def run_ac_pipeline(img: LumaImage, th: Optional[AcThresholds] = None, refine: bool = False,
                    seed: int = 0, jpeg_quant: bool = False, jpeg_quality: int = 75,
                    d2_gate: Optional[float] = 1.0, smap_params=None, gmm_components: int = 2,
                    workers: Optional[int] = None) -> SegmentationResult:
    """Segment a page into Background / Text / Picture at 8x8 granularity."""
    th = th or AcThresholds()
    timings = {}
    t_start = time.perf_counter()

    t = time.perf_counter()
    grid = tile_blocks(img, AC_BLOCK)
    tiles = grid.flat().astype(np.float64)
    timings["tile"] = time.perf_counter() - t

    t = time.perf_counter()
    coeffs, energy = map_chunks(lambda b: _coeff_stage(b, jpeg_quant, jpeg_quality),
                                tiles, workers)
    timings["dct"] = time.perf_counter() - t

    t = time.perf_counter()
    smooth = classify_smoothness(energy.reshape(grid.rows, grid.cols), th).ravel()
    timings["smoothness"] = time.perf_counter() - t

    t = time.perf_counter()
    fg = np.flatnonzero(~smooth)
    d1 = dct.d1_batch(coeffs[fg], dct.prev_dc_raster(coeffs)[fg])
    pix = tiles[fg]
    if jpeg_quant and len(fg):
        pix = dct.decompress_batch(coeffs[fg])
    d2 = map_chunks(_two_color_stage, pix, workers) if len(fg) else np.zeros(0)
    feats = np.full((grid.rows * grid.cols, 2), np.nan)
    feats[fg, 0] = d1
    feats[fg, 1] = d2
    timings["features"] = time.perf_counter() - t

    labels = np.full(grid.rows * grid.cols, BlockLabel.BACKGROUND, dtype=np.uint8)
    info = {"foreground_blocks": int(len(fg)), "degenerate": False, "refined": False}
    t = time.perf_counter()
    if len(fg):
        cm = kmeans_features(feats[fg], th.gamma, seed)
        names = assign_text_picture(cm, d2_gate)
        labels[fg] = np.array([int(names[j]) for j in cm.labels], dtype=np.uint8)
        info["degenerate"] = cm.degenerate
        info["clusters"] = [
            {"mean_d1": float(a), "mean_d2": float(b), "label": names[j].name.lower(),
             "size": int(np.count_nonzero(cm.labels == j))}
            for j, (a, b) in enumerate(zip(cm.mean_d1, cm.mean_d2))
        ]
    timings["cluster"] = time.perf_counter() - t

    t = time.perf_counter()
    if refine and len(fg):
        from .smap import SmapParams, refine_labels

        params = smap_params or SmapParams()
        new, smap_info = refine_labels(
            feats.reshape(grid.rows, grid.cols, 2),
            labels.reshape(grid.rows, grid.cols),
            params, n_components=gmm_components, seed=seed,
        )
        labels = new.ravel().astype(np.uint8)
        info["refined"] = smap_info.get("applied", False)
        info["smap"] = smap_info
    timings["smap"] = time.perf_counter() - t
    timings["total"] = time.perf_counter() - t_start

    lmap = LabelMap(grid.rows, grid.cols, AC_BLOCK, labels, img.width, img.height)
    config = {
        "pipeline": "ac",
        "ac": {**asdict(th), "refine": bool(refine), "jpeg_quant": bool(jpeg_quant),
               "jpeg_quality": int(jpeg_quality), "d2_gate": d2_gate},
        "seed": int(seed),
    }
    if refine:
        from .smap import SmapParams

        config["smap"] = asdict(smap_params or SmapParams())
        config["smap"]["components"] = gmm_components
    return SegmentationResult("ac", lmap, feats.reshape(grid.rows, grid.cols, 2),
                              timings, config, info)
