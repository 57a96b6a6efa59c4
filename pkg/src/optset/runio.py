"""Matrix files, config echoes, and metrics: everything a run reads or writes.

CSV uses '.' decimals, ',' separators, an optional single header row, and
full-precision (round-trip exact) float serialization. The flat binary format
is magic + version + shape, then row-major little-endian float64.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

_MAGIC = b"MTRX"
_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


def save_matrix_binary(path, matrix: np.ndarray) -> None:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValueError(f"need a 2-D matrix, got shape {matrix.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, matrix.shape[0], matrix.shape[1]))
        fh.write(np.ascontiguousarray(matrix, dtype="<f8").tobytes())


def _load_matrix_binary(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise ValueError(f"{path}: truncated binary matrix header")
        magic, version, rows, cols = _HEADER.unpack(raw)
        if magic != _MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {_MAGIC!r}")
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported format version {version}")
        data = fh.read(rows * cols * 8)
    if len(data) != rows * cols * 8:
        raise ValueError(f"{path}: expected {rows * cols} float64 values, file is short")
    matrix = np.frombuffer(data, dtype="<f8").reshape(rows, cols).copy()
    if not np.isfinite(matrix).all():
        raise ValueError(f"{path}: binary matrix contains NaN or Inf")
    return matrix


def save_matrix_csv(path, matrix: np.ndarray, header: list[str] | None = None) -> None:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValueError(f"need a 2-D matrix, got shape {matrix.shape}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header is not None:
            fh.write(",".join(header) + "\n")
        for row in matrix:
            fh.write(",".join(repr(v) for v in row) + "\n")


def _load_matrix_csv(path) -> np.ndarray:
    rows: list[list[float]] = []
    width = None
    header_allowed = True
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            tokens = line.split(",")
            try:
                values = [float(t) for t in tokens]
            except ValueError:
                if header_allowed:
                    header_allowed = False
                    continue
                raise ValueError(f"{path}:{lineno}: non-numeric entry in {line!r}") from None
            header_allowed = False
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise ValueError(
                    f"{path}:{lineno}: ragged row has {len(values)} values, expected {width}"
                )
            for v in values:
                if not np.isfinite(v):
                    raise ValueError(f"{path}:{lineno}: non-finite entry {v}")
            rows.append(values)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return np.array(rows, dtype=np.float64)


def load_matrix(path, fmt: str = "auto") -> np.ndarray:
    """Load a matrix from CSV or the flat binary format.

    ``auto`` sniffs the binary magic, falling back to CSV.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"matrix file not found: {path}")
    if fmt == "auto":
        with open(path, "rb") as fh:
            fmt = "binary" if fh.read(4) == _MAGIC else "csv"
    if fmt == "binary":
        return _load_matrix_binary(path)
    if fmt == "csv":
        return _load_matrix_csv(path)
    raise ValueError(f"unknown matrix format {fmt!r}")


# ---------------------------------------------------------------------------
# key=value files (config echo, metrics)
# ---------------------------------------------------------------------------


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (np.floating,)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    return str(value)


def write_kv(path, mapping: dict) -> None:
    """Flat sorted key=value file; the one format for config echoes and metrics."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key in sorted(mapping):
            fh.write(f"{key}={format_value(mapping[key])}\n")


def read_kv(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out
