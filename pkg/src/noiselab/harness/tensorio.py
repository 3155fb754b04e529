"""Flat binary tensor files for run artifacts.

Layout (all little-endian):

    bytes 0..3   magic  b"NLTS"
    byte  4      format version (1)
    byte  5      dtype code (see _DTYPES)
    byte  6      ndim
    bytes 7..    ndim int64 dims, then the raw array payload

The format stores exactly what numpy holds, so a save/load round-trip is
bit-identical; every run artifact (noise, decoded clips, loss traces)
goes through it.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

__all__ = ["save_tensor", "load_tensor", "TensorFormatError"]

MAGIC = b"NLTS"
FORMAT_VERSION = 1

_DTYPES = {
    1: np.dtype("<f8"),
    2: np.dtype("<f4"),
    3: np.dtype("<i8"),
    4: np.dtype("<i4"),
    5: np.dtype("u1"),
    6: np.dtype("?"),
}
_CODES = {v: k for k, v in _DTYPES.items()}


class TensorFormatError(ValueError):
    """File is not a valid tensor artifact."""


def save_tensor(path, arr: np.ndarray) -> Path:
    path = Path(path)
    arr = np.asarray(arr)
    if not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)
    canonical = arr.dtype.newbyteorder("<")
    if canonical not in _CODES:
        raise TensorFormatError(f"unsupported dtype {arr.dtype}")
    arr = arr.astype(canonical, copy=False)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BBB", FORMAT_VERSION, _CODES[canonical], arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
        fh.write(arr.tobytes())
    return path


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise TensorFormatError(f"bad magic: {path} is not a tensor artifact")
    version, code, ndim = struct.unpack_from("<BBB", raw, 4)
    if version != FORMAT_VERSION:
        raise TensorFormatError(f"unsupported format version {version}")
    if code not in _DTYPES:
        raise TensorFormatError(f"unknown dtype code {code}")
    shape = struct.unpack_from(f"<{ndim}q", raw, 7)
    dtype = _DTYPES[code]
    offset = 7 + 8 * ndim
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    payload = raw[offset:]
    if len(payload) != expected:
        raise TensorFormatError(
            f"payload of {len(payload)} bytes does not match shape {shape}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
