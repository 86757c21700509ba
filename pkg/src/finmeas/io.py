"""Serialization helpers: CSV, canonical JSON, and the FMQ1 field format."""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch

FMQ1_MAGIC = b"FMQ1"


def fmt17(x: float) -> str:
    """Format a float with 17 significant digits (round-trip exact)."""
    return f"{float(x):.17g}"


def write_matrix_csv(path, matrix: np.ndarray, header: list[str] | None = None) -> None:
    """Write a 1-D or 2-D array as CSV, row-major, 17 significant digits."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    lines = []
    if header is not None:
        lines.append(",".join(header))
    for row in matrix:
        lines.append(",".join(fmt17(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix_csv(path, skip_header: bool = False) -> np.ndarray:
    rows = []
    for i, line in enumerate(Path(path).read_text().splitlines()):
        if skip_header and i == 0:
            continue
        if line.strip():
            rows.append([float(v) for v in line.split(",")])
    return np.asarray(rows, dtype=float)


def write_rows_csv(path, header: list[str], rows) -> None:
    """Write heterogeneous rows (floats formatted to 17 digits, rest via str)."""
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, (float, np.floating)):
                cells.append(fmt17(v))
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def write_field_fmq1(path, n: int, values: np.ndarray) -> None:
    """Binary grid-field dump: magic ``FMQ1``, little-endian uint32 header
    (n, count), then count little-endian float64 values."""
    values = np.asarray(values, dtype=float).reshape(-1)
    with open(path, "wb") as fh:
        fh.write(FMQ1_MAGIC)
        fh.write(struct.pack("<II", int(n), values.size))
        fh.write(values.astype("<f8").tobytes())


def read_field_fmq1(path):
    """Read an FMQ1 field; returns (n, values)."""
    raw = Path(path).read_bytes()
    if raw[:4] != FMQ1_MAGIC:
        raise DimensionMismatch(f"bad magic {raw[:4]!r}, expected {FMQ1_MAGIC!r}")
    n, count = struct.unpack("<II", raw[4:12])
    values = np.frombuffer(raw[12:], dtype="<f8")
    if values.size != count:
        raise DimensionMismatch(f"header promises {count} values, file has {values.size}")
    return int(n), values.copy()


def _jsonable(obj):
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    return obj


def canonical_json(obj) -> str:
    """Deterministic JSON: sorted keys, native float repr, trailing newline."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=1) + "\n"


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
