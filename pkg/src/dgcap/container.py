"""Binary container shared by feature bundles and checkpoints.

Layout (all integers little-endian)::

    magic            8 bytes, b"DGVC0001"
    header_len       u32
    header           header_len bytes of UTF-8 JSON
    blob*            until end of file:
        name_len     u16
        name         UTF-8
        dtype        u8   (0 = float32, 1 = float64, 2 = int64)
        nbytes       u64
        data         nbytes, row-major little-endian
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import BadMagicError, LengthMismatchError, NonFiniteDataError

MAGIC = b"DGVC0001"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {v: k for k, v in _DTYPES.items()}


def encode(header: dict, blobs: list[tuple[str, np.ndarray]]) -> bytes:
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(head)), head]
    for name, arr in blobs:
        dt = np.dtype(arr.dtype).newbyteorder("<")
        if dt not in _CODES:
            raise TypeError(f"unsupported blob dtype {arr.dtype} for {name!r}")
        raw = np.ascontiguousarray(arr, dtype=dt).tobytes()
        key = name.encode("utf-8")
        parts += [struct.pack("<H", len(key)), key, struct.pack("<BQ", _CODES[dt], len(raw)), raw]
    return b"".join(parts)


def decode(buf: bytes, source: str = "<bytes>") -> tuple[dict, dict[str, tuple[np.dtype, bytes]]]:
    """Split a container into its header and raw blobs (not yet reshaped)."""
    if len(buf) < len(MAGIC) and MAGIC.startswith(buf):
        raise LengthMismatchError(f"{source}: file ends inside the magic number ({len(buf)} bytes)")
    if buf[:8] != MAGIC:
        raise BadMagicError(f"{source}: bad magic {buf[:8]!r}, expected {MAGIC!r}")
    pos = 8

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise LengthMismatchError(f"{source}: file ends inside {what} "
                                      f"(need {n} bytes at offset {pos}, have {len(buf) - pos})")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    (hlen,) = struct.unpack("<I", take(4, "header length"))
    try:
        header = json.loads(take(hlen, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise LengthMismatchError(f"{source}: unreadable header ({exc})") from None
    blobs: dict[str, tuple[np.dtype, bytes]] = {}
    while pos < len(buf):
        (nlen,) = struct.unpack("<H", take(2, "blob name length"))
        name = take(nlen, "blob name").decode("utf-8")
        code, nbytes = struct.unpack("<BQ", take(9, f"blob {name!r} descriptor"))
        if code not in _DTYPES:
            raise LengthMismatchError(f"{source}: blob {name!r} has unknown dtype code {code}")
        blobs[name] = (_DTYPES[code], take(nbytes, f"blob {name!r}"))
    return header, blobs


def blob_array(blobs, name: str, source: str = "<bytes>", check_finite: bool = True) -> np.ndarray:
    if name not in blobs:
        raise LengthMismatchError(f"{source}: missing blob {name!r}")
    dt, raw = blobs[name]
    if len(raw) % dt.itemsize:
        raise LengthMismatchError(f"{source}: blob {name!r} length {len(raw)} is not a multiple of {dt.itemsize}")
    arr = np.frombuffer(raw, dtype=dt).astype(dt.newbyteorder("="))
    if check_finite and arr.dtype.kind == "f" and not np.all(np.isfinite(arr)):
        raise NonFiniteDataError(f"{source}: blob {name!r} contains NaN or Inf")
    return arr


def write_atomic(path: str | Path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
