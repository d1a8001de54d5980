"""Flat-binary matrix format shared by embeddings, dataset latents, checkpoints.

Layout (little-endian): magic "PSTA", u32 version=1, u32 rows, u32 cols,
then rows*cols float32 values in row-major order.
"""

from __future__ import annotations

import struct

import numpy as np

__all__ = ["MAGIC", "FORMAT_VERSION", "MatrixFormatError", "matrix_to_bytes", "matrix_from_bytes"]

MAGIC = b"PSTA"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIII")


class MatrixFormatError(ValueError):
    """Payload is not a valid flat-binary matrix."""


def matrix_to_bytes(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    if arr.ndim != 2:
        raise MatrixFormatError(f"expected a 2-D matrix, got shape {arr.shape}")
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, arr.shape[0], arr.shape[1])
    return header + arr.tobytes(order="C")


def matrix_from_bytes(data: bytes) -> np.ndarray:
    if len(data) < _HEADER.size:
        raise MatrixFormatError(f"payload too short ({len(data)} bytes)")
    magic, version, rows, cols = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise MatrixFormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise MatrixFormatError(f"unsupported version {version}")
    expected = _HEADER.size + rows * cols * 4
    if len(data) != expected:
        raise MatrixFormatError(f"expected {expected} bytes for {rows}x{cols}, got {len(data)}")
    values = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    return values.astype(np.float64).reshape(rows, cols)
