"""Turn block labels into a pixel text mask and rectangular text regions."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import List, Union

import numpy as np
from scipy import ndimage

from .imaging import (BlockLabel, LabelMap, LumaImage, RasterImage, atomic_write_bytes,
                      atomic_write_text, encode_image)

FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


@dataclass
class TextMask:
    bits: np.ndarray  # (height, width) bool

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]


@dataclass
class TextRegion:
    id: int
    x: int
    y: int
    w: int
    h: int
    block_count: int

    def to_dict(self) -> dict:
        return {"id": self.id, "x": self.x, "y": self.y, "w": self.w, "h": self.h,
                "blocks": self.block_count}


def text_blocks(lmap: LabelMap, include_graphics: bool = False) -> np.ndarray:
    keep = lmap.labels == BlockLabel.TEXT
    if include_graphics:
        keep |= lmap.labels == BlockLabel.GRAPHICS
    return keep


def text_mask(lmap: LabelMap, include_graphics: bool = False) -> TextMask:
    b = lmap.block_size
    keep = text_blocks(lmap, include_graphics)
    full = np.repeat(np.repeat(keep, b, axis=0), b, axis=1)
    return TextMask(full[: lmap.height, : lmap.width].copy())


def extract_regions(lmap: LabelMap, include_graphics: bool = False) -> List[TextRegion]:
    """4-connected components of text blocks as pixel bounding boxes.

    Ordered top-to-bottom, then left-to-right; ids follow that order.
    Boxes are clipped to the page, so edge padding never leaks into them.
    """
    keep = text_blocks(lmap, include_graphics)
    comp, n = ndimage.label(keep, structure=FOUR_CONNECTED)
    if n == 0:
        return []
    sizes = np.bincount(comp.ravel(), minlength=n + 1)
    b = lmap.block_size
    boxes = []
    for k, sl in enumerate(ndimage.find_objects(comp), start=1):
        r0, r1 = sl[0].start, sl[0].stop
        c0, c1 = sl[1].start, sl[1].stop
        x0, y0 = c0 * b, r0 * b
        x1, y1 = min(c1 * b, lmap.width), min(r1 * b, lmap.height)
        boxes.append((y0, x0, x1 - x0, y1 - y0, int(sizes[k])))
    boxes.sort()
    return [TextRegion(i, x, y, w, h, cnt) for i, (y, x, w, h, cnt) in enumerate(boxes)]


def regions_manifest(regions: List[TextRegion]) -> dict:
    return {"regions": [r.to_dict() for r in regions]}


def crop(img: Union[LumaImage, RasterImage], region: TextRegion) -> np.ndarray:
    return img.data[region.y : region.y + region.h, region.x : region.x + region.w]


def export_regions(img: Union[LumaImage, RasterImage], regions: List[TextRegion],
                   out_dir: Union[str, os.PathLike], fmt: str = "pgm") -> List[Path]:
    """Write one crop per region plus ``regions.json``; returns the crop paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise OSError(f"{out} is not writable")
    if fmt == "pgm" and img.data.ndim == 3:
        fmt = "ppm"
    paths = []
    for r in regions:
        if r.x < 0 or r.y < 0 or r.x + r.w > img.data.shape[1] or r.y + r.h > img.data.shape[0]:
            raise ValueError(f"region {r.id} lies outside the image")
        path = out / f"region_{r.id}.{fmt}"
        atomic_write_bytes(path, encode_image(RasterImage(crop(img, r).copy()), fmt))
        paths.append(path)
    manifest = regions_manifest(regions)
    manifest["files"] = [p.name for p in paths]
    atomic_write_text(out / "regions.json", json.dumps(manifest, indent=2))
    return paths
