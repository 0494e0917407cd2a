"""CSV matrices and flat ``key = value`` config files."""
from __future__ import annotations

import csv
from typing import Dict

import numpy as np

ORIENTATIONS = ("rows", "columns")


class CsvFormatError(ValueError):
    """Unparseable cell, with its 1-based line and column."""


def read_matrix(path, orientation: str = "rows", header: bool = False) -> np.ndarray:
    """Read a numeric CSV as a ``p x n`` matrix.

    ``orientation="rows"`` means each row is an observation (the file is
    ``n x p``); ``"columns"`` means each column is one.
    """
    if orientation not in ORIENTATIONS:
        raise ValueError(f"orientation must be one of {ORIENTATIONS}")
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if header and lineno == 1:
                continue
            if not row or all(not cell.strip() for cell in row):
                continue
            values = []
            for col, cell in enumerate(row, start=1):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise CsvFormatError(f"{path}:{lineno}:{col}: cannot parse {cell.strip()!r} as a number") from None
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise CsvFormatError(f"{path}:{lineno}: expected {width} fields, found {len(values)}")
            rows.append(values)
    if not rows:
        raise CsvFormatError(f"{path}: no data")
    data = np.array(rows, dtype=float)
    if not np.all(np.isfinite(data)):
        raise CsvFormatError(f"{path}: non-finite values")
    return data.T if orientation == "rows" else data


def read_vector(path, header: bool = False) -> np.ndarray:
    """All numbers of a CSV file, in reading order."""
    return read_matrix(path, "columns", header).ravel()


def write_matrix(path, matrix, orientation: str = "rows", header=None) -> None:
    """Write a ``p x n`` matrix in round-trip precision."""
    if orientation not in ORIENTATIONS:
        raise ValueError(f"orientation must be one of {ORIENTATIONS}")
    m = np.atleast_2d(np.asarray(matrix, dtype=float))
    if orientation == "rows":
        m = m.T
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header is not None:
            w.writerow(header)
        for row in m:
            w.writerow([repr(float(v)) for v in row])


def read_config(path) -> Dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CsvFormatError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if not key:
                raise CsvFormatError(f"{path}:{lineno}: empty key")
            out[key] = value
    return out
