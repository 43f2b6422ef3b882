"""Count series CSV files and covariates for seasonal regression means."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .process import ConfigurationError, CountSeries


class ParseError(ValueError):
    """Malformed input file; ``row`` is the 1-based line number."""

    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


def _parse_count(text: str, row: int) -> int:
    s = text.strip()
    if not s:
        raise ParseError("missing count", row)
    try:
        v = int(s)
    except ValueError:
        raise ParseError(f"count {s!r} is not an integer", row) from None
    if v < 0:
        raise ParseError(f"count {v} is negative", row)
    return v


def _looks_numeric(s: str) -> bool:
    try:
        float(s.strip())
        return True
    except ValueError:
        return False


def _records(path):
    """Non-blank CSV records with their 1-based line numbers."""
    with open(path, newline="") as fh:
        return [(i, r) for i, r in enumerate(csv.reader(fh), start=1) if r and any(f.strip() for f in r)]


def read_counts_csv(path) -> CountSeries:
    """Read one or two columns (optional label, count).

    A first line whose last field is not numeric is taken as a header. Errors
    report the line number in the file.
    """
    records = _records(path)
    if records and not _looks_numeric(records[0][1][-1]):
        records = records[1:]
    if not records:
        raise ParseError("no data rows")
    width = len(records[0][1])
    if width not in (1, 2):
        raise ParseError(f"expected 1 or 2 columns, found {width}", records[0][0])
    values, labels = [], []
    for line, r in records:
        if len(r) != width:
            raise ParseError(f"expected {width} columns, found {len(r)}", line)
        values.append(_parse_count(r[-1], line))
        if width == 2:
            labels.append(r[0].strip())
    return CountSeries(np.array(values, dtype=np.int64), labels if width == 2 else None)


def write_counts_csv(series: CountSeries, path, header: bool = True) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if series.labels is not None:
            if header:
                w.writerow(["label", "count"])
            for lab, v in zip(series.labels, series.values):
                w.writerow([lab, int(v)])
        else:
            if header:
                w.writerow(["count"])
            for v in series.values:
                w.writerow([int(v)])


def read_covariates_csv(path) -> np.ndarray:
    """Numeric matrix, one row per time point; a non-numeric first line is a header."""
    records = _records(path)
    if records and not all(_looks_numeric(f) for f in records[0][1]):
        records = records[1:]
    rows = []
    for line, r in records:
        try:
            rows.append([float(f) for f in r])
        except ValueError:
            raise ParseError("non-numeric covariate", line) from None
        if len(rows[-1]) != len(rows[0]):
            raise ParseError("ragged covariate row", line)
    if not rows:
        raise ParseError("no covariate rows")
    return np.array(rows)


def build_seasonal_covariates(n: int, period: float, include_trend: bool = True) -> np.ndarray:
    """Columns ``[1, sin(2 pi t / period), cos(2 pi t / period)]`` plus ``t / n`` if requested, t = 1..n."""
    if period < 2:
        raise ConfigurationError("period must be at least 2")
    if n < 1:
        raise ConfigurationError("n must be at least 1")
    t = np.arange(1, n + 1, dtype=float)
    ang = 2.0 * math.pi * t / period
    cols = [np.ones(n), np.sin(ang), np.cos(ang)]
    if include_trend:
        cols.append(t / n)
    return np.column_stack(cols)
