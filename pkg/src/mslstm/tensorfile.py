"""Bit-exact binary tensor container (MSLT format).

Layout: magic "MSLT", little-endian u32 version (currently 1), u8 dtype code
(0 = float32, 1 = float64), u8 rank (at most 5), rank little-endian u64
dimensions, then the payload as little-endian row-major scalars. Reading is
the exact inverse of writing, so a round trip is bit-identical.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import DataIOError, FormatError

__all__ = ["write_tensor", "read_tensor", "MAGIC", "VERSION"]

MAGIC = b"MSLT"
VERSION = 1
MAX_RANK = 5

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES_BY_KIND = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def write_tensor(path, array: np.ndarray) -> None:
    """Write a rank <= 5 float array; all values must be finite."""
    arr = np.asarray(array)
    if arr.dtype not in _CODES_BY_KIND:
        arr = arr.astype(np.float64)
    if arr.ndim > MAX_RANK:
        raise FormatError(f"rank {arr.ndim} exceeds the format maximum {MAX_RANK}")
    if arr.size and not np.isfinite(arr).all():
        raise FormatError("refusing to write non-finite values")
    code = _CODES_BY_KIND[arr.dtype]
    header = MAGIC + struct.pack("<IBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = np.ascontiguousarray(arr).astype(_DTYPE_CODES[code], copy=False).tobytes()
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc


def read_tensor(path) -> np.ndarray:
    """Read back exactly what :func:`write_tensor` stored."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc

    if len(raw) < 10:
        raise DataIOError(f"{path}: file too short for an MSLT header ({len(raw)} bytes)")
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    version, code, rank = struct.unpack_from("<IBB", raw, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}, expected {VERSION}")
    if code not in _DTYPE_CODES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    if rank > MAX_RANK:
        raise FormatError(f"{path}: rank {rank} exceeds the format maximum {MAX_RANK}")
    offset = 10
    if len(raw) < offset + 8 * rank:
        raise DataIOError(f"{path}: truncated dimension list")
    dims = struct.unpack_from(f"<{rank}Q", raw, offset)
    offset += 8 * rank
    dtype = _DTYPE_CODES[code]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    expected = count * dtype.itemsize
    actual = len(raw) - offset
    if actual != expected:
        raise DataIOError(
            f"{path}: payload truncated or padded, expected {expected} bytes, got {actual}"
        )
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    return data.reshape(dims).copy()
