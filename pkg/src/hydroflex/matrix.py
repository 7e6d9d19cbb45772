"""Ancillary services matrix: capability scoring, derived services and rendering."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Mapping

SERVICES = ("sync-inertia", "synth-inertia", "FFR", "FCR", "aFRR", "mFRR", "RR", "volt-var", "black-start")
TITLES = {
    "sync-inertia": "SYNCHRONOUS INERTIA",
    "synth-inertia": "SYNTHETIC INERTIA",
    "FFR": "FAST FREQUENCY RESPONSE (FFR)",
    "FCR": "FREQUENCY CONTAINMENT RESERVE (FCR)",
    "aFRR": "AUTOMATIC FREQUENCY RESTORATION RESERVE (aFRR)",
    "mFRR": "MANUAL FREQUENCY RESTORATION RESERVE (mFRR)",
    "RR": "REPLACEMENT RESERVE (RR)",
    "volt-var": "VOLTAGE/VAR CONTROL",
    "black-start": "BLACK START",
}
TIMESCALES = {
    "sync-inertia": "0 s",
    "synth-inertia": "< 500 ms",
    "FFR": "0.5-2 s",
    "FCR": "< 30 s",
    "aFRR": "30 s - 5 min",
    "mFRR": "< 15 min",
    "RR": "> 15 min",
    "volt-var": "< 1 s",
    "black-start": "N/A",
}
NOT_APPLICABLE = "n/a"
MODES = ("turbine", "pump")


def _sub_modes(service: str) -> tuple[str, ...]:
    return ("turbine",) if service == "black-start" else MODES


def round_score(x: float) -> float:
    """Round to one decimal, halves away from zero."""
    return float(Decimal(repr(float(x))).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class ServiceScore:
    service: str
    mode: str
    value: float
    hsc_pair: tuple[float, float] | None = None

    def __post_init__(self):
        if self.service not in SERVICES:
            raise ValueError(f"unknown service {self.service!r}")
        if self.mode not in ("turbine", "pump", "combined"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if (self.mode == "combined") != (self.hsc_pair is not None):
            raise ValueError("an HSC pair goes with the combined mode and only there")
        vals = [self.value] + list(self.hsc_pair or ())
        for v in vals:
            if not 0.0 <= v <= 5.0 or round_score(v) != v:
                raise ValueError(f"score {v} must lie in [0, 5] with one decimal")

    @property
    def text(self) -> str:
        if self.hsc_pair is not None:
            return aggregate_hsc(*self.hsc_pair)
        return f"{self.value:.1f}"


def aggregate_hsc(turbine: float, pump: float) -> str:
    """Side-by-side cell text for a hydraulic short-circuit row; the scores are not summed."""
    return f"{round_score(turbine):.1f} + {round_score(pump):.1f}"


@dataclass(frozen=True)
class ScoringConfig:
    """Capability that maps to a full score, per service, with a linear curve."""

    references: Mapping[str, float]
    curve: str = "linear"

    def __post_init__(self):
        for k, v in self.references.items():
            if k not in SERVICES:
                raise ValueError(f"unknown service {k!r} in scoring references")
            if not v > 0:
                raise ValueError(f"scoring reference for {k} must be positive")
        if self.curve != "linear":
            raise ValueError(f"unsupported scoring curve {self.curve!r}")

    @classmethod
    def from_plant(cls, plant) -> "ScoringConfig":
        refs = dict(plant.extras.get("scoring", {}))
        for derived in ("mFRR", "RR"):
            if derived not in refs and "aFRR" in refs:
                refs[derived] = refs["aFRR"]
        return cls(refs)


def score_value(capability: float, service: str, scoring: ScoringConfig) -> float:
    if capability < 0:
        raise ValueError("capability must be >= 0")
    try:
        ref = scoring.references[service]
    except KeyError:
        raise KeyError(f"no scoring reference for {service}") from None
    return round_score(5.0 * min(1.0, capability / ref))


def score_service(capability: float, service: str, scoring: ScoringConfig, mode: str = "turbine") -> ServiceScore:
    return ServiceScore(service, mode, score_value(capability, service, scoring))


def derive_mfrr_rr(afrr: ServiceScore) -> tuple[ServiceScore, ServiceScore]:
    """The slower reserves inherit the aFRR score (a fixed-speed pump's 0 included)."""
    if afrr.service != "aFRR":
        raise ValueError("derivation needs an aFRR score")
    return tuple(ServiceScore(s, afrr.mode, afrr.value, afrr.hsc_pair) for s in ("mFRR", "RR"))


# ---------------------------------------------------------------------- matrix

Cell = ServiceScore | None  # None = not applicable


@dataclass
class MatrixRow:
    demonstrator: str
    technology: str
    hsc: bool = False
    cells: dict[str, dict[str, Cell]] = field(default_factory=dict)

    def cell(self, service: str, mode: str = "turbine") -> Cell:
        key = "combined" if self.hsc else mode
        return self.cells.get(service, {}).get(key)


@dataclass
class AncillaryServicesMatrix:
    rows: list[MatrixRow] = field(default_factory=list)

    def validate(self) -> None:
        for r in self.rows:
            for s, by_mode in r.cells.items():
                if s not in SERVICES:
                    raise ValueError(f"row {r.technology}: unknown service {s!r}")
                for m, c in by_mode.items():
                    if c is None:
                        continue
                    if c.service != s:
                        raise ValueError(f"row {r.technology}: cell for {s} holds a {c.service} score")
                    if r.hsc != (c.hsc_pair is not None):
                        raise ValueError(f"row {r.technology}: HSC pair present iff the stack has HSC")

    def __eq__(self, other) -> bool:
        return isinstance(other, AncillaryServicesMatrix) and self.rows == other.rows


def _columns() -> list[tuple[str, str]]:
    return [(s, m) for s in SERVICES for m in _sub_modes(s)]


def _row_texts(row: MatrixRow) -> list[str]:
    out = []
    for s, m in _columns():
        if row.hsc:
            if m != "turbine":
                out.append("")  # the pair spans both sub-columns
                continue
            c = row.cells.get(s, {}).get("combined")
        else:
            c = row.cells.get(s, {}).get(m)
        out.append(NOT_APPLICABLE if c is None else c.text)
    return out


def _header_rows() -> list[list[str]]:
    titles, scales, modes = ["Demonstrator", "Technology"], ["", ""], ["", ""]
    for s, m in _columns():
        first = m == "turbine"
        titles.append(TITLES[s] if first else "")
        scales.append(TIMESCALES[s] if first else "")
        modes.append("T" if m == "turbine" else "P")
    return [titles, scales, modes]


def render_matrix(matrix: AncillaryServicesMatrix, fmt: str = "csv") -> str:
    matrix.validate()
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for h in _header_rows():
            w.writerow(h)
        for r in matrix.rows:
            w.writerow([r.demonstrator, r.technology] + _row_texts(r))
        return buf.getvalue()
    if fmt == "json":
        return json.dumps(_to_json(matrix), indent=2, sort_keys=True) + "\n"
    if fmt == "markdown":
        head = ["Demonstrator", "Technology"] + [
            f"{TITLES[s]} ({TIMESCALES[s]}) {'T' if m == 'turbine' else 'P'}" for s, m in _columns()]
        lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
        for r in matrix.rows:
            lines.append("| " + " | ".join([r.demonstrator, r.technology] + _row_texts(r)) + " |")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown format {fmt!r}; choose csv, json or markdown")


def _to_json(matrix: AncillaryServicesMatrix) -> dict:
    rows = []
    for r in matrix.rows:
        cells = {}
        for s, by_mode in r.cells.items():
            cells[s] = {m: (None if c is None else {"value": c.value,
                                                    "hsc_pair": list(c.hsc_pair) if c.hsc_pair else None})
                        for m, c in by_mode.items()}
        rows.append({"demonstrator": r.demonstrator, "technology": r.technology, "hsc": r.hsc, "cells": cells})
    return {"services": list(SERVICES), "rows": rows}


def parse_matrix(text: str) -> AncillaryServicesMatrix:
    """Inverse of the JSON rendering."""
    doc = json.loads(text)
    rows = []
    for r in doc["rows"]:
        cells: dict[str, dict[str, Cell]] = {}
        for s, by_mode in r["cells"].items():
            cells[s] = {}
            for m, c in by_mode.items():
                if c is None:
                    cells[s][m] = None
                else:
                    pair = tuple(c["hsc_pair"]) if c["hsc_pair"] is not None else None
                    cells[s][m] = ServiceScore(s, m, c["value"], pair)
        rows.append(MatrixRow(r["demonstrator"], r["technology"], r["hsc"], cells))
    m = AncillaryServicesMatrix(rows)
    m.validate()
    return m


# ---------------------------------------------------------------------- score files

def _parse_cell(service: str, mode: str, text: str) -> Cell:
    text = text.strip()
    if text in ("", NOT_APPLICABLE):
        return None
    if "+" in text:
        a, b = (float(x) for x in text.split("+"))
        return ServiceScore(service, "combined", max(a, b), (a, b))
    return ServiceScore(service, mode, float(text))


def read_score_file(path: str | Path) -> AncillaryServicesMatrix:
    """Long-format score file: ``demonstrator,technology,service,mode,score``.

    ``mode`` is T, P or HSC; an HSC score reads ``a + b``. Rows appear in
    first-seen order; services absent from a row are not applicable.
    """
    rows: dict[tuple[str, str], MatrixRow] = {}
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    for rec in csv.DictReader(lines):
        key = (rec["demonstrator"], rec["technology"])
        mode = {"T": "turbine", "P": "pump", "HSC": "combined"}[rec["mode"]]
        row = rows.setdefault(key, MatrixRow(*key, hsc=mode == "combined"))
        if row.hsc != (mode == "combined"):
            raise ValueError(f"row {key}: mixes HSC and per-mode scores")
        row.cells.setdefault(rec["service"], {})[mode] = _parse_cell(rec["service"], mode, rec["score"])
    m = AncillaryServicesMatrix(list(rows.values()))
    m.validate()
    return m


# ---------------------------------------------------------------------- from capabilities

def applicable(service: str, mode: str, variable_speed: bool, hsc: bool, has_pump: bool = True) -> bool:
    """Whether a matrix cell exists for a stack: inertia type follows the speed technology,
    FFR needs variable speed, black start is a turbine-only, non-HSC entry."""
    if mode == "pump" and not has_pump:
        return False
    if service == "sync-inertia":
        return not variable_speed
    if service in ("synth-inertia", "FFR"):
        return variable_speed
    if service == "black-start":
        return mode == "turbine" and not hsc
    return True


def build_row(demonstrator: str, technology: str, capabilities: Mapping[tuple[str, str], float | None],
              scoring: ScoringConfig, variable_speed: bool, hsc: bool = False, has_pump: bool = True) -> MatrixRow:
    """Score one technology row from per-unit capabilities keyed by ``(service, mode)``.

    mFRR and RR are derived from aFRR; a missing capability scores 0.
    """
    row = MatrixRow(demonstrator, technology, hsc)
    scores: dict[tuple[str, str], float] = {}
    for s in SERVICES:
        if s in ("mFRR", "RR"):
            continue
        for m in _sub_modes(s):
            if applicable(s, m, variable_speed, hsc, has_pump):
                cap = capabilities.get((s, m))
                scores[(s, m)] = score_value(cap or 0.0, s, scoring)
    for m in MODES:
        if ("aFRR", m) in scores:
            scores[("mFRR", m)] = scores[("RR", m)] = scores[("aFRR", m)]
    for s in SERVICES:
        if hsc:
            t, p = scores.get((s, "turbine")), scores.get((s, "pump"))
            if s == "black-start" or (t is None and p is None):
                row.cells[s] = {"combined": None}
            else:
                t, p = t or 0.0, p or 0.0
                row.cells[s] = {"combined": ServiceScore(s, "combined", max(t, p), (t, p))}
        else:
            row.cells[s] = {m: (ServiceScore(s, m, scores[(s, m)]) if (s, m) in scores else None)
                            for m in _sub_modes(s)}
    return row
