"""Tensor archive: a flat, append-only container of named arrays.

Layout::

    b"TENARCH1"
    repeated:
        <u32 little-endian header length>
        <UTF-8 JSON header {"key": str, "dtype": str, "shape": [int, ...]}>
        <raw little-endian payload, row-major>

``f32`` is the default dtype; ``f64``, ``i64`` and ``u8`` are also accepted so
that checkpoints can carry integer buffers and embedded JSON blobs.
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"TENARCH1"

_DTYPES = {
    "f32": np.dtype("<f4"),
    "f64": np.dtype("<f8"),
    "i64": np.dtype("<i8"),
    "u8": np.dtype("u1"),
}
_NAMES = {v: k for k, v in _DTYPES.items()}


class ArchiveFormatError(ValueError):
    """Raised for a bad magic, truncated record or unknown dtype."""


def _dtype_name(arr: np.ndarray) -> str:
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
    if dt.kind == "f" and dt.itemsize == 4:
        return "f32"
    if dt.kind == "f" and dt.itemsize == 8:
        return "f64"
    if dt.kind in "iub" and dt.itemsize == 1 and dt.kind != "i":
        return "u8"
    if dt.kind in "iu":
        return "i64"
    raise ArchiveFormatError(f"unsupported dtype {arr.dtype}")


def encode(arrays: Mapping[str, np.ndarray]) -> bytes:
    chunks = [MAGIC]
    for key, value in arrays.items():
        arr = np.asarray(value)
        name = _dtype_name(arr)
        payload = np.ascontiguousarray(arr, dtype=_DTYPES[name]).tobytes()
        header = json.dumps({"key": key, "dtype": name, "shape": list(arr.shape)}).encode("utf-8")
        chunks.append(struct.pack("<I", len(header)))
        chunks.append(header)
        chunks.append(payload)
    return b"".join(chunks)


def decode(blob: bytes) -> dict[str, np.ndarray]:
    if blob[: len(MAGIC)] != MAGIC:
        raise ArchiveFormatError("bad magic: not a tensor archive")
    out: dict[str, np.ndarray] = {}
    pos = len(MAGIC)
    end = len(blob)
    while pos < end:
        if pos + 4 > end:
            raise ArchiveFormatError("truncated record length")
        (hlen,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        if pos + hlen > end:
            raise ArchiveFormatError("truncated record header")
        try:
            header = json.loads(blob[pos : pos + hlen].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ArchiveFormatError(f"corrupt record header: {exc}") from exc
        pos += hlen
        dtype = _DTYPES.get(header.get("dtype"))
        if dtype is None:
            raise ArchiveFormatError(f"unknown dtype {header.get('dtype')!r}")
        shape = tuple(int(s) for s in header["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if pos + nbytes > end:
            raise ArchiveFormatError(f"truncated payload for {header['key']!r}")
        arr = np.frombuffer(blob, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos)
        out[header["key"]] = arr.reshape(shape).copy()
        pos += nbytes
    return out


def save(path: str | os.PathLike, arrays: Mapping[str, np.ndarray]) -> None:
    """Write atomically: temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(arrays))
    os.replace(tmp, path)


def load(path: str | os.PathLike) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())


def pack_json(obj) -> np.ndarray:
    return np.frombuffer(json.dumps(obj, sort_keys=True).encode("utf-8"), dtype=np.uint8).copy()


def unpack_json(arr: np.ndarray):
    return json.loads(arr.tobytes().decode("utf-8"))
