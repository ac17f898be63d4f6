"""Reading and writing trace CSV files (``freq_hz,value,unit,state``)."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .errors import DomainError, TraceFormatError
from .noisecal import STATES, UNITS, Trace

HEADER = ["freq_hz", "value", "unit", "state"]


def write_trace(trace: Trace, path) -> None:
    """Write with round-trip float precision so reading back is exact."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for f, v in zip(trace.freq_grid, trace.values):
            w.writerow([repr(float(f)), repr(float(v)), trace.unit, trace.state])


def ingest_trace(path, expected_unit: str | None = None, expected_state: str | None = None) -> Trace:
    """Parse and validate a trace file; errors carry the 1-based line number."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise TraceFormatError(f"cannot read {path}: {exc}") from exc
    rows = list(csv.reader(text.splitlines()))
    if not rows or [c.strip() for c in rows[0]] != HEADER:
        raise TraceFormatError(f"header must be {','.join(HEADER)}", line=1)
    freqs, values = [], []
    unit = state = None
    for n, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise TraceFormatError(f"expected 4 fields, got {len(row)}", line=n)
        try:
            f = float(row[0])
            v = float(row[1])
        except ValueError:
            raise TraceFormatError(f"non-numeric frequency or value {row[:2]!r}", line=n) from None
        u, s = row[2].strip(), row[3].strip()
        if not math.isfinite(f) or not math.isfinite(v):
            raise TraceFormatError("non-finite frequency or value", line=n)
        if u not in UNITS:
            raise TraceFormatError(f"unknown unit {u!r}", line=n)
        if s not in STATES:
            raise TraceFormatError(f"unknown state {s!r}", line=n)
        if unit is None:
            unit, state = u, s
        elif u != unit or s != state:
            raise TraceFormatError(f"unit/state {u}/{s} differs from {unit}/{state} on earlier lines", line=n)
        if expected_unit is not None and u != expected_unit:
            raise TraceFormatError(f"unit {u!r} does not match expected {expected_unit!r}", line=n)
        if expected_state is not None and s != expected_state:
            raise TraceFormatError(f"state {s!r} does not match expected {expected_state!r}", line=n)
        if freqs and f <= freqs[-1]:
            raise TraceFormatError(f"frequency {f!r} is not above the previous {freqs[-1]!r}", line=n)
        freqs.append(f)
        values.append(v)
    if not freqs:
        raise TraceFormatError("no data rows", line=len(rows) + 1)
    try:
        return Trace(np.array(freqs), np.array(values), unit, state)
    except DomainError as exc:
        raise TraceFormatError(str(exc)) from exc
