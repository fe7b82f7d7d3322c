"""Netpbm reading/writing (binary PPM P6, 16-bit PGM P5); PNG through Pillow when present."""
from __future__ import annotations

from pathlib import Path

import numpy as np


def _tokens(raw: bytes, count: int) -> tuple[list[bytes], int]:
    out, i = [], 0
    while len(out) < count:
        while raw[i:i + 1].isspace():
            i += 1
        if raw[i:i + 1] == b"#":
            while raw[i:i + 1] not in (b"\n", b""):
                i += 1
            continue
        j = i
        while not raw[j:j + 1].isspace():
            j += 1
        out.append(raw[i:j])
        i = j
    return out, i + 1


def read_ppm(path) -> np.ndarray:
    """Binary 8-bit PPM to ``3 x H x W`` float64 in [0, 1]."""
    raw = Path(path).read_bytes()
    (magic, w, h, maxval), start = _tokens(raw, 4)
    if magic != b"P6":
        raise ValueError(f"{path}: not a binary PPM (P6)")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval > 255:
        raise ValueError(f"{path}: only 8-bit PPM is supported")
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h * 3, offset=start).reshape(h, w, 3)
    return np.clip(data.transpose(2, 0, 1).astype(np.float64) / maxval, 0.0, 1.0)


def to_uint8(pixels: np.ndarray) -> np.ndarray:
    """``3 x H x W`` floats in [0, 1] to ``H x W x 3`` bytes."""
    return np.round(np.clip(pixels, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)


def write_ppm(path, rgb: np.ndarray) -> None:
    """Write ``H x W x 3`` uint8 (or ``3 x H x W`` float) as binary PPM."""
    rgb = np.asarray(rgb)
    if rgb.dtype != np.uint8:
        rgb = to_uint8(rgb)
    h, w, _ = rgb.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(rgb).tobytes())


def write_pgm16(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 65535:
        raise ValueError("label values must fit in 16 bits")
    h, w = labels.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n65535\n".encode("ascii") + labels.astype(">u2").tobytes())


def read_pgm16(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    (magic, w, h, maxval), start = _tokens(raw, 4)
    if magic != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5)")
    w, h = int(w), int(h)
    dtype = ">u2" if int(maxval) > 255 else np.uint8
    return np.frombuffer(raw, dtype=dtype, count=w * h, offset=start).reshape(h, w).astype(np.intp)


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pnm"):
        return read_ppm(path)
    try:
        from PIL import Image
    except ImportError:  # pragma: no cover
        raise ValueError(f"{path}: only PPM is supported without Pillow") from None
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1)
