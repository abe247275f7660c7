"""Versioned binary container used for model files.

Layout (all integers little-endian)::

    magic      4 bytes
    version    uint32
    meta_len   uint32
    meta       UTF-8 JSON, keys sorted
    payload    arrays back to back, in the order listed under meta["arrays"]

Each array entry in the metadata is ``[name, dtype, shape]`` where dtype is
``"<f8"`` (64-bit float) or ``"u1"`` (raw bytes, e.g. packed bit masks).
"""
import json
import struct

import numpy as np

from .errors import FormatError

_HEADER = struct.Struct("<4sII")
_DTYPES = {"<f8", "u1"}


def pack(magic, version, meta, arrays):
    """Serialize ``meta`` (JSON-able dict) plus named arrays to bytes."""
    entries, chunks = [], []
    for name, arr in arrays:
        arr = np.asarray(arr)
        dtype = "u1" if arr.dtype == np.uint8 else "<f8"
        data = np.ascontiguousarray(arr, dtype=dtype)
        entries.append([name, dtype, list(data.shape)])
        chunks.append(data.tobytes())
    meta = dict(meta, arrays=entries)
    header = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _HEADER.pack(magic, version, len(header)) + header + b"".join(chunks)


def unpack(blob, magic, max_version):
    """Inverse of :func:`pack`; returns ``(version, meta, {name: array})``."""
    if len(blob) < _HEADER.size:
        raise FormatError("file too short for header")
    got_magic, version, meta_len = _HEADER.unpack_from(blob, 0)
    if got_magic != magic:
        raise FormatError(f"bad magic {got_magic!r}, expected {magic!r}")
    if not 1 <= version <= max_version:
        raise FormatError(f"unsupported format version {version}")
    start = _HEADER.size
    try:
        meta = json.loads(blob[start:start + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt metadata: {exc}") from exc
    pos = start + meta_len
    arrays = {}
    for name, dtype, shape in meta.get("arrays", []):
        if dtype not in _DTYPES:
            raise FormatError(f"array {name!r} has unsupported dtype {dtype!r}")
        count = int(np.prod(shape, dtype=np.int64))
        nbytes = count * np.dtype(dtype).itemsize
        if pos + nbytes > len(blob):
            raise FormatError(f"array {name!r} is truncated")
        arrays[name] = np.frombuffer(blob, dtype=dtype, count=count, offset=pos).reshape(shape).copy()
        pos += nbytes
    if pos != len(blob):
        raise FormatError("trailing bytes after payload")
    return version, meta, arrays
