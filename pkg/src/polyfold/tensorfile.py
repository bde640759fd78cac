"""Flat binary tensor container.

Layout: 4-byte magic, uint32 format version, uint32 header length, a UTF-8
JSON header (``meta`` plus an ordered list of ``{name, shape}``), then each
tensor as little-endian float32 in row-major order, back to back.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import IoFailure, SchemaVersionMismatch

FORMAT_VERSION = 1


def write_tensors(path, tensors: dict, meta: dict, magic: bytes) -> None:
    entries = []
    blobs = []
    for name, arr in tensors.items():
        a = np.ascontiguousarray(np.asarray(arr, dtype="<f4"))
        entries.append({"name": name, "shape": list(a.shape)})
        blobs.append(a.tobytes(order="C"))
    header = json.dumps({"meta": meta, "tensors": entries}, sort_keys=True).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(magic)
            fh.write(struct.pack("<II", FORMAT_VERSION, len(header)))
            fh.write(header)
            for b in blobs:
                fh.write(b)
    except OSError as exc:
        raise IoFailure(f"cannot write {path!r}: {exc}") from exc


def read_tensors(path, magic: bytes) -> tuple:
    """Return ``(tensors, meta)``; tensors keep file order."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path!r}: {exc}") from exc
    if data[:4] != magic:
        raise IoFailure(f"{path!r} is not a {magic!r} file")
    version, hlen = struct.unpack("<II", data[4:12])
    if version != FORMAT_VERSION:
        raise SchemaVersionMismatch(f"{path!r}: format version {version}, expected {FORMAT_VERSION}")
    header = json.loads(data[12:12 + hlen].decode("utf-8"))
    offset = 12 + hlen
    tensors = {}
    for e in header["tensors"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(e["shape"])
        tensors[e["name"]] = arr.copy()
        offset += 4 * count
    if offset != len(data):
        raise IoFailure(f"{path!r}: trailing or missing tensor bytes")
    return tensors, header["meta"]
