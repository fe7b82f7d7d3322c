"""Binary checkpoint container.

Layout::

    b"SPGNNCKP"                      8-byte magic
    uint64 LE                        manifest length in bytes
    manifest                         UTF-8 JSON
    repeated per parameter:
        uint64 LE                    payload length in bytes
        float64 LE [...]             row-major values

Manifest entries carry ``name``, ``shape`` and ``offset``, the byte offset
of the length prefix measured from the start of the array section.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Parameter

MAGIC = b"SPGNNCKP"
_LE_F64 = np.dtype("<f8")


def save_checkpoint(path, named_params: Sequence[tuple[str, Parameter]], extra: dict | None = None) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, p in named_params:
        payload = np.ascontiguousarray(p.data, dtype=_LE_F64).tobytes()
        entries.append({"name": name, "shape": list(p.shape), "offset": offset})
        blobs.append(struct.pack("<Q", len(payload)) + payload)
        offset += 8 + len(payload)
    manifest = json.dumps({"format": 1, "params": entries, "extra": extra or {}}).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for blob in blobs:
            fh.write(blob)
    tmp.replace(path)


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (mlen,) = struct.unpack_from("<Q", raw, 8)
    manifest = json.loads(raw[16:16 + mlen].decode("utf-8"))
    base = 16 + mlen
    arrays = {}
    for entry in manifest["params"]:
        start = base + entry["offset"]
        (nbytes,) = struct.unpack_from("<Q", raw, start)
        shape = tuple(entry["shape"])
        if nbytes != 8 * int(np.prod(shape, dtype=np.int64)):
            raise ValueError(f"{path}: size mismatch for {entry['name']}")
        arr = np.frombuffer(raw, dtype=_LE_F64, count=nbytes // 8, offset=start + 8)
        arrays[entry["name"]] = arr.astype(np.float64).reshape(shape)
    return arrays, manifest.get("extra", {})


def load_into(path, named_params: Sequence[tuple[str, Parameter]]) -> dict:
    """Copy stored arrays into ``named_params``; returns the manifest's extra metadata."""
    arrays, extra = read_checkpoint(path)
    names = [n for n, _ in named_params]
    missing = [n for n in names if n not in arrays]
    if missing or len(arrays) != len(names):
        raise ValueError(f"checkpoint/model mismatch (missing: {missing[:5]})")
    for name, p in named_params:
        if arrays[name].shape != p.shape:
            raise ValueError(f"shape mismatch for {name}: {arrays[name].shape} vs {p.shape}")
        p.data[...] = arrays[name]
    return extra
