"""Binary matrix container and CSV export used for embeddings and caches.

File layout: a 16-byte header (4-byte magic ``QMX1``, little-endian u32
version, u32 rows, u32 cols) followed by the row-major float64 payload,
little-endian. The same container backs embedding exports and the dataset
cache.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataFormatError

MATRIX_MAGIC = b"QMX1"
MATRIX_VERSION = 1
_HEADER = struct.Struct("<4sIII")


def save_matrix(path: str | Path, values: np.ndarray) -> None:
    arr = np.ascontiguousarray(values, dtype="<f8")
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DataFormatError(f"matrix container stores 2-D arrays, got ndim={arr.ndim}")
    rows, cols = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MATRIX_MAGIC, MATRIX_VERSION, rows, cols))
        fh.write(arr.tobytes())


def load_matrix(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise DataFormatError(f"{path}: truncated header ({len(head)} bytes)")
        magic, version, rows, cols = _HEADER.unpack(head)
        if magic != MATRIX_MAGIC:
            raise DataFormatError(f"{path}: bad magic {magic!r}, expected {MATRIX_MAGIC!r}")
        if version != MATRIX_VERSION:
            raise DataFormatError(f"{path}: unsupported version {version}")
        payload = fh.read()
    expected = rows * cols * 8
    if len(payload) != expected:
        raise DataFormatError(
            f"{path}: payload is {len(payload)} bytes, expected {expected} for {rows}x{cols}"
        )
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).copy()


def save_csv(
    path: str | Path,
    values: np.ndarray,
    header: Sequence[str],
    label_column: np.ndarray | None = None,
) -> None:
    """Write a matrix as CSV, optionally prefixing each row with its label.

    Floats are rendered with ``repr`` so a re-export of identical data is
    byte-identical.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise DataFormatError("CSV export expects a 2-D matrix")
    if len(header) != values.shape[1] + (0 if label_column is None else 1):
        raise DataFormatError("CSV header length does not match column count")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, row in enumerate(values):
            cells = [repr(float(v)) for v in row]
            if label_column is not None:
                cells = [str(int(label_column[i]))] + cells
            writer.writerow(cells)
