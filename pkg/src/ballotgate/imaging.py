"""Grayscale image primitives.

Images are thin immutable wrappers around 2-D numpy arrays (row-major,
shape ``(height, width)``). The ``tag`` field tracks the intensity
domain: ``"raw8"`` for the 0..255 scale (integer when loaded from an
8-bit source, real after interpolation) and ``"normalized"`` for
zero-mean unit-variance floats.

Everything here is pure; the arrays are marked read-only so values can
be shared freely between threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from PIL import Image

RAW8 = "raw8"
NORMALIZED = "normalized"

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class Rect(NamedTuple):
    """Axis-aligned rectangle: top-left corner (x, y), extent (w, h).

    A plain named tuple so that enumerating hundreds of thousands of
    feature rectangles stays cheap; geometry is validated where a rect
    meets an image (``inside``), not at construction.
    """

    x: int
    y: int
    w: int
    h: int

    def inside(self, width: int, height: int) -> bool:
        return (
            self.x >= 0
            and self.y >= 0
            and self.w >= 1
            and self.h >= 1
            and self.x + self.w <= width
            and self.y + self.h <= height
        )

    def iou(self, other: "Rect") -> float:
        ix = max(0, min(self.x + self.w, other.x + other.w) - max(self.x, other.x))
        iy = max(0, min(self.y + self.h, other.y + other.h) - max(self.y, other.y))
        inter = ix * iy
        union = self.w * self.h + other.w * other.h - inter
        return inter / union if union else 0.0


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GrayImage:
    """Single-channel raster. ``pixels`` has shape (height, width)."""

    pixels: np.ndarray
    tag: str = RAW8

    def __post_init__(self):
        if self.pixels.ndim != 2 or self.pixels.size == 0:
            raise ValueError("image must be a non-empty 2-D raster")
        if self.tag not in (RAW8, NORMALIZED):
            raise ValueError(f"unknown tag {self.tag!r}")
        if self.tag == RAW8:
            lo, hi = float(self.pixels.min()), float(self.pixels.max())
            if lo < 0.0 or hi > 255.0:
                raise ValueError(f"raw8 intensities out of range [{lo}, {hi}]")
        object.__setattr__(self, "pixels", _freeze(self.pixels))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class IntegralImage:
    """Summed-area table. ``table[y, x]`` is the sum of all source pixels
    with x' <= x and y' <= y; the last entry equals the total image sum.

    Internally a zero-padded copy is kept so that any rectangle sum is
    exactly 4 table lookups with no boundary branches.
    """

    padded: np.ndarray  # (h+1, w+1), first row/column zero

    def __post_init__(self):
        object.__setattr__(self, "padded", _freeze(self.padded))

    @property
    def table(self) -> np.ndarray:
        return self.padded[1:, 1:]

    @property
    def width(self) -> int:
        return self.padded.shape[1] - 1

    @property
    def height(self) -> int:
        return self.padded.shape[0] - 1


def to_grayscale(rgb) -> GrayImage:
    """Collapse a 3-channel raster to luma: round(0.299 R + 0.587 G + 0.114 B).

    Accepts an (h, w, 3) array or a sequence of three equally-shaped
    channel arrays. Rounding is half-up so results are reproducible
    across platforms.
    """
    if isinstance(rgb, (list, tuple)):
        channels = [np.asarray(c, dtype=np.float64) for c in rgb]
        if len(channels) != 3:
            raise ValueError(f"expected 3 channels, got {len(channels)}")
        if not (channels[0].shape == channels[1].shape == channels[2].shape):
            raise ValueError("channel dimensions do not match")
        stack = np.stack(channels, axis=-1)
    else:
        stack = np.asarray(rgb, dtype=np.float64)
        if stack.ndim != 3 or stack.shape[2] != 3:
            raise ValueError(f"expected an (h, w, 3) raster, got shape {stack.shape}")
    wr, wg, wb = LUMA_WEIGHTS
    luma = wr * stack[:, :, 0] + wg * stack[:, :, 1] + wb * stack[:, :, 2]
    return GrayImage(np.floor(luma + 0.5).astype(np.uint8), RAW8)


def normalize(img: GrayImage) -> GrayImage:
    """Shift/scale to zero mean and unit (population) variance.

    A constant input has no contrast to preserve and maps to all zeros.
    """
    if img.tag != RAW8:
        raise ValueError("normalize expects a raw8 image")
    data = img.pixels.astype(np.float64)
    mean = data.mean()
    std = data.std()
    if std == 0.0:
        return GrayImage(np.zeros_like(data), NORMALIZED)
    return GrayImage((data - mean) / std, NORMALIZED)


def integral_image(img: GrayImage) -> IntegralImage:
    """Build the summed-area table in one pass.

    Integer inputs accumulate in int64 (exact: 2^16 px * 255 fits easily);
    float inputs accumulate in float64.
    """
    dtype = np.int64 if np.issubdtype(img.pixels.dtype, np.integer) else np.float64
    h, w = img.pixels.shape
    padded = np.zeros((h + 1, w + 1), dtype=dtype)
    np.cumsum(np.cumsum(img.pixels, axis=0, dtype=dtype), axis=1, out=padded[1:, 1:])
    return IntegralImage(padded)


def rect_sum(ii: IntegralImage, r: Rect):
    """Sum of the source pixels inside ``r`` via exactly 4 table lookups."""
    if not r.inside(ii.width, ii.height):
        raise ValueError(
            f"rect {r} outside {ii.width}x{ii.height} image"
        )
    p = ii.padded
    total = p[r.y + r.h, r.x + r.w] - p[r.y, r.x + r.w] - p[r.y + r.h, r.x] + p[r.y, r.x]
    return total.item()


def resize(img: GrayImage, w: int, h: int) -> GrayImage:
    """Bilinear resample to w x h (half-pixel centers, edges clamped).

    Resizing to the same dimensions returns the input unchanged. Output
    pixels are float64; a raw8 input keeps its tag (values stay within
    [0, 255] because bilinear weights are a convex combination).
    """
    if w < 1 or h < 1:
        raise ValueError(f"target size must be >= 1x1, got {w}x{h}")
    src_h, src_w = img.pixels.shape
    if (w, h) == (src_w, src_h):
        return img
    data = img.pixels.astype(np.float64)
    xs = np.clip((np.arange(w) + 0.5) * (src_w / w) - 0.5, 0.0, src_w - 1.0)
    ys = np.clip((np.arange(h) + 0.5) * (src_h / h) - 0.5, 0.0, src_h - 1.0)
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    x1 = np.minimum(x0 + 1, src_w - 1)
    y1 = np.minimum(y0 + 1, src_h - 1)
    fx = xs - x0
    fy = (ys - y0)[:, None]
    top = data[np.ix_(y0, x0)] * (1.0 - fx) + data[np.ix_(y0, x1)] * fx
    bottom = data[np.ix_(y1, x0)] * (1.0 - fx) + data[np.ix_(y1, x1)] * fx
    return GrayImage(top * (1.0 - fy) + bottom * fy, img.tag)


def crop(img: GrayImage, r: Rect) -> GrayImage:
    if not r.inside(img.width, img.height):
        raise ValueError(f"rect {r} outside {img.width}x{img.height} image")
    return GrayImage(img.pixels[r.y : r.y + r.h, r.x : r.x + r.w].copy(), img.tag)


def extract_window(img: GrayImage, r: Rect, side: int = 24) -> GrayImage:
    """Crop, resample to side x side, then normalize (per-window)."""
    return normalize(resize(crop(img, r), side, side))


def full_rect(img: GrayImage) -> Rect:
    return Rect(0, 0, img.width, img.height)


# -- file I/O ----------------------------------------------------------------

def read_image(path) -> GrayImage:
    """Load an 8-bit grayscale PGM (P5) or PNG; color input goes through
    the luma conversion."""
    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "I"):
            arr = np.asarray(im.convert("L"), dtype=np.uint8)
            return GrayImage(arr, RAW8)
        rgb = np.asarray(im.convert("RGB"))
    return to_grayscale(rgb)


def write_pgm(img: GrayImage, path) -> None:
    """Dump as binary PGM. Normalized images are min-max stretched to
    0..255 first (debug aid, not a lossless round-trip)."""
    data = img.pixels.astype(np.float64)
    if img.tag == NORMALIZED:
        lo, hi = data.min(), data.max()
        data = np.zeros_like(data) if hi == lo else (data - lo) * (255.0 / (hi - lo))
    arr = np.floor(data + 0.5).clip(0, 255).astype(np.uint8)
    path = Path(path)
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    path.write_bytes(header + arr.tobytes())
