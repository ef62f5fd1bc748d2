"""Deterministic named-array file: JSON header + raw little-endian blobs.

Used for probe checkpoints and embedding weights. Unlike ``.npz`` (a zip
archive with member timestamps) the byte stream depends only on the
payload, which the CLI relies on for reproducible outputs.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

_MAGIC = b"NARR"
_VERSION = 1

__all__ = ["save_arrays", "load_arrays"]


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        dt = a.dtype.newbyteorder("<")
        blob = a.astype(dt, copy=False).tobytes()
        entries.append(
            {"name": name, "dtype": dt.str, "shape": list(a.shape), "offset": offset}
        )
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {"version": _VERSION, "meta": meta or {}, "arrays": entries},
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    with Path(path).open("wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    buf = Path(path).read_bytes()
    if buf[:4] != _MAGIC or len(buf) < 8:
        raise FormatError(f"not an array file: {path}")
    (hlen,) = struct.unpack_from("<I", buf, 4)
    try:
        header = json.loads(buf[8 : 8 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"bad header in {path}: {e}") from e
    if header.get("version") != _VERSION:
        raise FormatError(f"unsupported array-file version in {path}")
    base = 8 + hlen
    arrays = {}
    for ent in header["arrays"]:
        dt = np.dtype(ent["dtype"])
        count = int(np.prod(ent["shape"], dtype=np.int64)) if ent["shape"] else 1
        start = base + ent["offset"]
        a = np.frombuffer(buf, dtype=dt, count=count, offset=start)
        arrays[ent["name"]] = a.reshape(ent["shape"]).copy()
    return arrays, header.get("meta", {})
