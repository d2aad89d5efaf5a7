"""Minimal netpbm I/O: binary PPM (P6) images and 16-bit PGM (P5) maps."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DatasetError


def write_ppm(path, image: np.ndarray) -> None:
    """Write an (h, w, 3) uint8 array as binary PPM."""
    arr = np.asarray(image, dtype=np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DatasetError(f"expected an (h, w, 3) image, got shape {arr.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_ppm(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"image file not found: {path}")
    data = path.read_bytes()
    fields, offset = _read_header_fields(data, count=4)
    if fields[0] != b"P6":
        raise DatasetError(f"{path}: not a binary PPM (magic {fields[0]!r})")
    w, h, maxval = (int(v) for v in fields[1:])
    if maxval != 255:
        raise DatasetError(f"{path}: unsupported maxval {maxval}")
    pixels = data[offset : offset + h * w * 3]
    if len(pixels) != h * w * 3:
        raise DatasetError(f"{path}: truncated pixel data")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w, 3).copy()


def write_pgm16(path, values: np.ndarray) -> None:
    """Write a (h, w) float array in [0, 1] as 16-bit big-endian PGM."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise DatasetError(f"expected an (h, w) map, got shape {arr.shape}")
    q = np.rint(np.clip(arr, 0.0, 1.0) * 65535.0).astype(">u2")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(q.tobytes())


def _read_header_fields(data: bytes, count: int) -> tuple[list[bytes], int]:
    # netpbm headers: whitespace-separated tokens, '#' comments to end of line
    fields: list[bytes] = []
    i = 0
    while len(fields) < count:
        if i >= len(data):
            raise DatasetError("truncated netpbm header")
        c = data[i : i + 1]
        if c == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j : j + 1].isspace():
                j += 1
            fields.append(data[i:j])
            i = j
    return fields, i + 1
