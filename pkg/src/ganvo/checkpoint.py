"""Versioned checkpoint files: JSON manifest followed by raw array blobs.

Layout: 4-byte magic, uint32 version, uint64 header length, UTF-8 JSON
header with sorted keys, then the concatenated array bytes.  Arrays are
stored little-endian in C order at recorded offsets, so a 64-bit save/
load cycle is bit-exact and two identical states produce byte-identical
files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"GVCK"
VERSION = 1


def save_checkpoint(path, arrays: dict, meta: dict | None = None) -> None:
    entries = {}
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        dtype = arr.dtype.newbyteorder("<")
        blob = arr.astype(dtype, copy=False).tobytes()
        entries[name] = {
            "dtype": dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(blob),
        }
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"arrays": entries, "meta": meta or {}}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    """Returns (arrays dict, meta dict)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    if len(raw) < 16:
        raise DataError(f"{path}: truncated header")
    version, header_len = struct.unpack("<IQ", raw[4:16])
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[16 : 16 + header_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt header ({exc})") from exc
    body = raw[16 + header_len :]
    arrays = {}
    for name, entry in header["arrays"].items():
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(body):
            raise DataError(f"{path}: truncated blob for {name}")
        arr = np.frombuffer(body[start : start + nbytes], dtype=np.dtype(entry["dtype"]))
        arrays[name] = arr.reshape(entry["shape"]).copy()
    return arrays, header["meta"]
