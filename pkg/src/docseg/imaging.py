"""Raster I/O, luminance conversion, block tiling and label maps.

Images are held as ``uint8`` numpy arrays: ``(height, width)`` for single
channel data and ``(height, width, 3)`` for RGB.
"""
from __future__ import annotations

import io
import json
import os
import tempfile
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image

from .errors import ConfigError, FormatError, GeometryError

PathLike = Union[str, os.PathLike]


class BlockLabel(IntEnum):
    BACKGROUND = 0
    TEXT = 1
    GRAPHICS = 2
    PICTURE = 3


# overlay tints, indexed by BlockLabel
TINTS = np.array(
    [
        [128, 128, 128],
        [255, 0, 0],
        [0, 255, 0],
        [0, 0, 255],
    ],
    dtype=np.float64,
)


@dataclass
class RasterImage:
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 3 and data.shape[2] == 1:
            data = data[:, :, 0]
        if data.ndim not in (2, 3) or (data.ndim == 3 and data.shape[2] != 3):
            raise GeometryError(f"unsupported raster shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise GeometryError("image must be at least 1x1")
        if data.dtype != np.uint8:
            if data.size and (data.min() < 0 or data.max() > 255):
                raise GeometryError("pixel values must lie in [0, 255]")
            data = data.astype(np.uint8)
        self.data = data

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3


@dataclass
class LumaImage:
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise GeometryError(f"luminance image must be 2-D, got {data.shape}")
        if data.dtype != np.uint8:
            if data.min() < 0 or data.max() > 255:
                raise GeometryError("luminance values must lie in [0, 255]")
            data = data.astype(np.uint8)
        self.data = data

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass
class BlockGrid:
    block_size: int
    blocks: np.ndarray  # (rows, cols, block_size, block_size)
    width: int
    height: int
    pad_right: int
    pad_bottom: int

    @property
    def rows(self) -> int:
        return self.blocks.shape[0]

    @property
    def cols(self) -> int:
        return self.blocks.shape[1]

    def flat(self) -> np.ndarray:
        """Tiles in raster order, shape ``(rows * cols, B, B)``."""
        b = self.block_size
        return self.blocks.reshape(-1, b, b)


@dataclass
class LabelMap:
    rows: int
    cols: int
    block_size: int
    labels: np.ndarray  # (rows, cols) uint8 holding BlockLabel codes
    width: Optional[int] = None
    height: Optional[int] = None

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.uint8)
        if labels.size != self.rows * self.cols:
            raise GeometryError(
                f"{labels.size} labels for a {self.rows}x{self.cols} grid"
            )
        if labels.size and labels.max() > 3:
            raise GeometryError("label codes must be in 0..3")
        self.labels = labels.reshape(self.rows, self.cols)
        if self.width is None:
            self.width = self.cols * self.block_size
        if self.height is None:
            self.height = self.rows * self.block_size

    def counts(self) -> dict:
        return {
            lab.name.lower(): int(np.count_nonzero(self.labels == lab))
            for lab in BlockLabel
        }

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "cols": self.cols,
            "block_size": self.block_size,
            "width": self.width,
            "height": self.height,
            "labels": [int(v) for v in self.labels.ravel()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LabelMap":
        try:
            return cls(
                rows=int(d["rows"]),
                cols=int(d["cols"]),
                block_size=int(d["block_size"]),
                labels=np.asarray(d["labels"], dtype=np.int64),
                width=d.get("width"),
                height=d.get("height"),
            )
        except KeyError as e:
            raise FormatError(f"label map is missing key {e}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "LabelMap":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# file I/O


def atomic_write_bytes(path: PathLike, payload: bytes) -> None:
    """Write ``payload`` to a temp file next to ``path`` and rename it over."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _netpbm_tokens(buf: bytes, count: int):
    """Read ``count`` header tokens after the magic; return tokens and data offset."""
    tokens = []
    pos = 2
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated netpbm header")
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates the header from the raster
    if pos >= n or not buf[pos : pos + 1].isspace():
        raise FormatError("truncated netpbm header")
    return tokens, pos + 1


def _decode_netpbm(buf: bytes) -> RasterImage:
    magic = buf[:2]
    channels = {b"P5": 1, b"P6": 3}[magic]
    tokens, offset = _netpbm_tokens(buf, 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise FormatError("non-numeric netpbm header field") from None
    if width < 1 or height < 1:
        raise FormatError("netpbm image has zero size")
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}")
    need = width * height * channels
    raw = buf[offset : offset + need]
    if len(raw) < need:
        raise FormatError(f"netpbm raster truncated: {len(raw)} of {need} bytes")
    data = np.frombuffer(raw, dtype=np.uint8)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return RasterImage(data.reshape(shape).copy())


def _decode_png(buf: bytes) -> RasterImage:
    try:
        im = Image.open(io.BytesIO(buf))
        im.load()
    except Exception as e:
        raise FormatError(f"cannot decode PNG: {e}") from None
    if im.mode in ("L", "RGB"):
        pass
    elif im.mode == "LA":
        im = im.convert("L")
    elif im.mode in ("RGBA", "P"):
        im = im.convert("RGB")
    else:
        raise FormatError(f"unsupported PNG mode {im.mode!r} (8-bit only)")
    return RasterImage(np.asarray(im, dtype=np.uint8).copy())


def load_image(path: PathLike) -> RasterImage:
    """Read a binary PGM (P5), PPM (P6) or 8-bit PNG file."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:2] in (b"P5", b"P6"):
        return _decode_netpbm(buf)
    if buf[:8] == b"\x89PNG\r\n\x1a\n":
        return _decode_png(buf)
    raise FormatError(f"{path}: not a P5/P6 netpbm or PNG file")


def encode_image(img: Union[RasterImage, LumaImage], fmt: str) -> bytes:
    data = img.data
    fmt = fmt.lower().lstrip(".")
    if fmt in ("pgm", "ppm", "pnm"):
        magic = b"P5" if data.ndim == 2 else b"P6"
        header = b"%s\n%d %d\n255\n" % (magic, data.shape[1], data.shape[0])
        return header + np.ascontiguousarray(data).tobytes()
    if fmt == "png":
        out = io.BytesIO()
        Image.fromarray(data).save(out, format="PNG")
        return out.getvalue()
    raise FormatError(f"unsupported output format {fmt!r}")


def save_image(path: PathLike, img: Union[RasterImage, LumaImage]) -> None:
    ext = Path(path).suffix.lower()
    if ext == ".pgm" and img.data.ndim == 3:
        raise FormatError("PGM output needs a single-channel image")
    atomic_write_bytes(path, encode_image(img, ext or "png"))


# ---------------------------------------------------------------------------
# pixel operations


def to_luminance(img: Union[RasterImage, LumaImage]) -> LumaImage:
    """BT.601 luma, rounded half away from zero and clamped to [0, 255]."""
    data = img.data
    if data.ndim == 2:
        return LumaImage(data.copy())
    rgb = data.astype(np.float64)
    y = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    y = np.floor(y + 0.5)
    return LumaImage(np.clip(y, 0, 255).astype(np.uint8))


def tile_blocks(img: LumaImage, block_size: int) -> BlockGrid:
    if int(block_size) != block_size or block_size < 1:
        raise ConfigError(f"block size must be a positive integer, got {block_size}")
    b = int(block_size)
    h, w = img.data.shape
    rows, cols = -(-h // b), -(-w // b)
    pad_b, pad_r = rows * b - h, cols * b - w
    padded = np.pad(img.data, ((0, pad_b), (0, pad_r)), mode="edge")
    blocks = padded.reshape(rows, b, cols, b).swapaxes(1, 2).copy()
    return BlockGrid(b, blocks, w, h, pad_r, pad_b)


def untile(grid: BlockGrid) -> LumaImage:
    """Reassemble a grid and drop its padding."""
    b = grid.block_size
    full = grid.blocks.swapaxes(1, 2).reshape(grid.rows * b, grid.cols * b)
    return LumaImage(full[: grid.height, : grid.width].copy())


def check_covers(width: int, height: int, lmap: LabelMap) -> None:
    b = lmap.block_size
    if lmap.cols != -(-width // b) or lmap.rows != -(-height // b):
        raise GeometryError(
            f"{lmap.rows}x{lmap.cols} grid of {b}px blocks does not cover a "
            f"{width}x{height} image"
        )


def block_to_pixels(lmap: LabelMap, width: int, height: int) -> np.ndarray:
    """Expand block labels to a per-pixel label array of the given size."""
    check_covers(width, height, lmap)
    b = lmap.block_size
    full = np.repeat(np.repeat(lmap.labels, b, axis=0), b, axis=1)
    return full[:height, :width]


def render_overlay(img: LumaImage, lmap: LabelMap) -> RasterImage:
    """Blend each block's tint 50/50 with the underlying luminance."""
    pix = block_to_pixels(lmap, img.width, img.height)
    luma = img.data.astype(np.float64)[..., None]
    out = 0.5 * luma + 0.5 * TINTS[pix]
    return RasterImage(np.floor(out + 0.5).astype(np.uint8))
