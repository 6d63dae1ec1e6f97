"""Versioned single-file container for trained artifacts (models, forests).

Layout (all integers little-endian)::

    offset 0   8 bytes   magic b"SUBPXART"
    offset 8   uint32    format version (currently 1)
    offset 12  uint64    header length H in bytes
    offset 20  H bytes   UTF-8 JSON header, keys sorted:
                           {"kind": str, "meta": {...},
                            "arrays": [{"name", "dtype", "shape", "offset", "nbytes"}]}
    offset 20+H          payload: arrays in C order, little-endian, each
                         starting on an 8-byte boundary relative to the
                         payload start

``dtype`` is a NumPy type string such as ``"<f4"`` or ``"<i8"``. The file is
a pure function of its content, so identical inputs give identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SUBPXART"
VERSION = 1


class ContainerError(ValueError):
    pass


def write_container(path, kind: str, meta: dict, arrays: dict) -> None:
    manifest, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        data = arr.tobytes()
        manifest.append(
            {
                "name": name,
                "dtype": arr.dtype.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(data),
            }
        )
        pad = (-len(data)) % 8
        chunks.append(data + b"\0" * pad)
        offset += len(data) + pad
    header = json.dumps(
        {"kind": kind, "meta": meta, "arrays": manifest}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for chunk in chunks:
            fh.write(chunk)


def read_container(path, kind: str | None = None):
    """Return (meta, arrays) from a container file."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ContainerError(f"{path}: not an artifact container")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported container version {version}")
    header = json.loads(raw[20 : 20 + hlen].decode("utf-8"))
    if kind is not None and header["kind"] != kind:
        raise ContainerError(f"{path}: expected a {kind!r} artifact, found {header['kind']!r}")
    base = 20 + hlen
    arrays = {}
    for entry in header["arrays"]:
        start = base + entry["offset"]
        buf = raw[start : start + entry["nbytes"]]
        if len(buf) != entry["nbytes"]:
            raise ContainerError(f"{path}: truncated array {entry['name']!r}")
        arr = np.frombuffer(buf, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(arr.dtype.newbyteorder("="))
    return header["meta"], arrays
