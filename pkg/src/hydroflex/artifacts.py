"""Deterministic artifact writers: time-series CSV and report JSON."""

from __future__ import annotations

import json
import math
import os
from pathlib import Path

import numpy as np

from .envelopes import ComplianceReport
from .plant import SimulationResult


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None, tuples to lists."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _write(path: Path, text: str) -> None:
    """Write through a temporary file so a crash never leaves a half-written artifact."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def trace_csv(result: SimulationResult, every: int = 1) -> str:
    """Time series as CSV with a fixed number format."""
    table = result.table()[::every]
    lines = [",".join(result.column_names())]
    lines += [",".join(f"{v:.9g}" for v in row) for row in table]
    return "\n".join(lines) + "\n"


def write_report(report: ComplianceReport, directory: str | Path, stem: str, trace_every: int = 1) -> Path:
    """Write ``stem.json`` and, when the report carries a simulation, ``stem.csv``."""
    d = Path(directory)
    if isinstance(report.trace, SimulationResult):
        _write(d / f"{stem}.csv", trace_csv(report.trace, trace_every))
        report.timeseries = f"{stem}.csv"
    path = d / f"{stem}.json"
    _write(path, dumps(report.to_dict()))
    return path


def write_text(path: str | Path, text: str) -> Path:
    p = Path(path)
    _write(p, text)
    return p


def read_report(path: str | Path) -> ComplianceReport:
    return ComplianceReport.from_dict(json.loads(Path(path).read_text()))
