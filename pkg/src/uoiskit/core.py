"""Binary mask geometry: run-length coding, IoU, image moments.

Masks are stored run-length encoded in row-major scan order. The run list
alternates zeros-run, ones-run, zeros-run, ... and always starts with a
zeros-run, which may be 0 when the first pixel is set (COCO-style counts,
but row-major). Coordinates are (x=column, y=row) with the origin at the
top-left pixel.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CorruptMask, EmptyMask, InvalidDimensions


@dataclass(frozen=True)
class ImageSize:
    h: int
    w: int

    def __post_init__(self) -> None:
        if self.h < 1 or self.w < 1:
            raise InvalidDimensions(f"image size must be at least 1x1, got {self.h}x{self.w}")

    @property
    def npixels(self) -> int:
        return self.h * self.w


@dataclass(frozen=True)
class PixelPoint:
    x: int
    y: int


@dataclass(frozen=True)
class Centroid:
    x: float
    y: float


@dataclass(frozen=True)
class BinaryMask:
    size: ImageSize
    runs: tuple[int, ...]

    @classmethod
    def from_dense(cls, dense) -> "BinaryMask":
        return from_dense(dense)


def rle_encode(dense, size: ImageSize) -> BinaryMask:
    """Encode a row-major bit sequence (flat or 2D array-like) as a BinaryMask."""
    flat = np.asarray(dense).reshape(-1).astype(bool)
    if flat.size != size.npixels:
        raise InvalidDimensions(
            f"dense length {flat.size} does not match {size.h}x{size.w}={size.npixels}"
        )
    changes = np.flatnonzero(flat[1:] != flat[:-1])
    bounds = np.concatenate(([0], changes + 1, [flat.size]))
    lengths = np.diff(bounds)
    runs = tuple(int(n) for n in lengths)
    if flat[0]:
        runs = (0,) + runs
    return BinaryMask(size=size, runs=runs)


def rle_decode(mask: BinaryMask) -> np.ndarray:
    """Decode to a (h, w) bool array. Raises CorruptMask on bad run lists."""
    runs = np.asarray(mask.runs, dtype=np.int64)
    if runs.size and runs.min() < 0:
        raise CorruptMask(f"negative run length in {mask.runs!r}")
    total = int(runs.sum())
    if total != mask.size.npixels:
        raise CorruptMask(
            f"runs sum to {total}, expected {mask.size.h}x{mask.size.w}={mask.size.npixels}"
        )
    values = np.zeros(runs.size, dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, runs)
    return flat.reshape(mask.size.h, mask.size.w)


def from_dense(dense: np.ndarray) -> BinaryMask:
    """Encode a 2D bool array, inferring the image size from its shape."""
    arr = np.asarray(dense)
    if arr.ndim != 2:
        raise InvalidDimensions(f"expected a 2D array, got shape {arr.shape}")
    return rle_encode(arr, ImageSize(arr.shape[0], arr.shape[1]))


def mask_area(mask: BinaryMask) -> int:
    """Number of one-pixels (sum of the ones-runs)."""
    return int(sum(mask.runs[1::2]))


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    """|a intersect b| / |a union b|; 1.0 when both masks are empty."""
    if a.size != b.size:
        raise InvalidDimensions(f"mask sizes differ: {a.size} vs {b.size}")
    da = rle_decode(a)
    db = rle_decode(b)
    union = int(np.logical_or(da, db).sum())
    if union == 0:
        return 1.0
    inter = int(np.logical_and(da, db).sum())
    return inter / union


def mask_centroid(mask: BinaryMask) -> Centroid:
    """Centroid via raw image moments: (m10/m00, m01/m00) over one-pixels."""
    dense = rle_decode(mask)
    ys, xs = np.nonzero(dense)
    if xs.size == 0:
        raise EmptyMask("cannot take the centroid of an empty mask")
    m00 = xs.size
    return Centroid(x=float(xs.sum()) / m00, y=float(ys.sum()) / m00)
