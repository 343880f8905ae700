"""Plain-file artifacts: CSV matrices, 8-bit graymaps and text reports."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


def write_matrix_csv(path, matrix, fmt: str = "%.9e") -> Path:
    path = Path(path)
    np.savetxt(path, np.asarray(matrix, float), delimiter=",", fmt=fmt)
    return path


def read_matrix_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def write_pgm(path, matrix) -> Path:
    """Binary (P5) 8-bit graymap, first matrix row at the bottom of the picture.

    Values are scaled linearly from [min, max] to [0, 255].
    """
    path = Path(path)
    m = np.asarray(matrix, float)
    lo, hi = float(m.min()), float(m.max())
    scaled = np.zeros_like(m) if hi == lo else (m - lo) / (hi - lo)
    pixels = np.rint(scaled[::-1] * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{m.shape[1]} {m.shape[0]}\n255\n".encode())
        fh.write(pixels.tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary graymap")
    width, height, depth = int(parts[1]), int(parts[2]), int(parts[3])
    if depth != 255:
        raise ValueError(f"{path}: only 8-bit graymaps are supported")
    data = np.frombuffer(parts[4][:width * height], np.uint8)
    return data.reshape(height, width)[::-1]


def write_rows_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def _cell(v):
    # np.float64 subclasses float but its repr carries the type name
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v
