"""Test battery over technology stacks and services, with artifact output."""

from __future__ import annotations

import dataclasses
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import artifacts
from .config import REFERENCE_PLANT, TESTED_SERVICES, load_plant
from .envelopes import ComplianceReport, Violation
from .hydraulics import SimulationError
from .matrix import AncillaryServicesMatrix, ScoringConfig, build_row, render_matrix
from .plant import Plant
from .qualification import (
    TechnologyStack,
    afrr_capability,
    black_start_capacity,
    fcr_capability,
    ffr_capability,
    run_ffr_test,
    synthetic_inertia_test,
    voltvar_report,
)

FRADES_STACKS = ("FS", "FS+SPPS", "FS+SPPS+HSC", "VS(DFIM)", "VS(DFIM)+SPPS", "VS(DFIM)+SPPS+HSC")
FORMATS = ("csv", "json", "markdown")
_EXT = {"csv": "csv", "json": "json", "markdown": "md"}


@dataclass
class CellResult:
    stack: str
    service: str
    reports: dict[str, ComplianceReport] = field(default_factory=dict)
    error: str | None = None

    @property
    def failed(self) -> bool:
        """The simulation itself broke down (as opposed to a non-compliant response)."""
        if self.error:
            return True
        return any(v.quantity == "simulation" for r in self.reports.values() for v in r.violations)


def slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "-", label).strip("-").lower()


def _hsc_sum(service: str, turbine: ComplianceReport, pump: ComplianceReport) -> ComplianceReport:
    viol = turbine.violations + pump.violations
    cap = turbine.capability + pump.capability
    return ComplianceReport(service, not viol, cap if not viol else 0.0, viol,
                            details={"turbine": turbine.capability, "pump": pump.capability})


# features a service's unit-level tests depend on; HSC only adds the plant report
_RELEVANT = {"FCR": ("spps",), "aFRR": ("spps",)}


def _base_stack(stack: TechnologyStack, service: str) -> TechnologyStack:
    keep = _RELEVANT.get(service, ())
    return dataclasses.replace(stack, hsc=False, hbh=False,
                               spps=stack.spps if "spps" in keep else False)


def _relabel(obj, label: str):
    if isinstance(obj, dict):
        return {k: (label if k == "stack" else _relabel(v, label)) for k, v in obj.items()}
    return obj


def _unit_reports(plant: Plant, stack: TechnologyStack, service: str, dt: float | None,
                  has_pump: bool) -> dict[str, ComplianceReport]:
    r: dict[str, ComplianceReport] = {}
    if service == "FCR":
        r["turbine"] = fcr_capability(plant, stack, "turbine", dt=dt)
        if has_pump:
            r["pump"] = fcr_capability(plant, stack, "pump", dt=dt)
    elif service == "aFRR":
        r["turbine"] = afrr_capability(plant, stack, "turbine", dt=dt)
        if has_pump:
            r["pump"] = afrr_capability(plant, stack, "pump", dt=dt)
    elif service == "FFR":
        r["turbine"] = ffr_capability(plant, stack, "turbine", dt=dt)
        if has_pump and stack.variable_speed:
            r["pump"] = run_ffr_test(plant, stack, mode="pump", dt=dt)
    elif service == "black-start":
        r["turbine"] = black_start_capacity(plant, stack, dt=dt)
    elif service == "inertia":
        r["turbine"] = synthetic_inertia_test(plant, stack, dt=dt)
        if has_pump:
            r["pump"] = synthetic_inertia_test(plant, stack, mode="pump", dt=dt)
    elif service == "volt-var":
        r["turbine"] = voltvar_report(plant, stack)
        if has_pump:
            r["pump"] = voltvar_report(plant, stack, "pump")
    else:
        raise ValueError(f"unknown service {service!r}")
    return r


def run_cell(plant: Plant, stack: TechnologyStack, service: str, dt: float | None = None,
             cache: dict | None = None) -> CellResult:
    """Run one (stack, service) cell; exceptions are captured into the result.

    With ``cache``, unit tests shared between stacks (same speed technology,
    SPPS where it matters) are simulated once and reused.
    """
    cell = CellResult(stack.label, service)
    has_pump = plant.units[0].config.pump_range is not None
    try:
        key = (_base_stack(stack, service).label, service)
        if cache is not None and key in cache:
            base = cache[key]
        else:
            try:
                base = _unit_reports(plant, stack, service, dt, has_pump)
            except (SimulationError, ValueError, ArithmeticError) as exc:
                base = exc
            if cache is not None:
                cache[key] = base
        if isinstance(base, Exception):
            raise base
        for mode, rep in base.items():
            cell.reports[mode] = dataclasses.replace(rep, details=_relabel(rep.details, stack.label))
        r = cell.reports
        if stack.hsc and has_pump:
            if service == "FCR":
                r["plant"] = _hsc_sum("FCR", r["turbine"], r["pump"])
            elif service == "aFRR":
                r["plant"] = afrr_capability(plant, stack, "HSC", dt=dt)
    except (SimulationError, ValueError, ArithmeticError) as exc:
        cell.error = f"{type(exc).__name__}: {exc}"
    return cell


def _worker(args) -> CellResult:
    plant_path, stack_label, service, dt = args
    plant = load_plant(plant_path)
    return run_cell(plant, TechnologyStack.parse(stack_label), service, dt)


def capabilities_of(cells: Sequence[CellResult]) -> dict:
    """``{stack: {service: {mode: MW or None}}}`` with errors recorded as None."""
    out: dict = {}
    for c in cells:
        per = out.setdefault(c.stack, {})
        svc = c.service
        if svc == "inertia":
            svc = "synth-inertia" if TechnologyStack.parse(c.stack).variable_speed else "sync-inertia"
        per[svc] = {m: (None if c.error else rep.capability) for m, rep in c.reports.items()} if not c.error else None
    return out


def build_matrix(caps: dict, scoring: ScoringConfig, demonstrator: str, has_pump: bool = True) -> AncillaryServicesMatrix:
    """Matrix rows from :func:`capabilities_of` output; untested services stay not applicable."""
    rows = []
    for label, per in caps.items():
        stack = TechnologyStack.parse(label)
        flat = {}
        for svc, modes in per.items():
            for m, v in (modes or {}).items():
                if m in ("turbine", "pump"):
                    flat[(svc, m)] = v or 0.0
        tested = set(per)
        if "aFRR" in tested:
            tested |= {"mFRR", "RR"}
        row = build_row(demonstrator, label, flat, scoring, stack.variable_speed, stack.hsc, has_pump)
        for svc in list(row.cells):
            if svc not in tested:
                row.cells[svc] = {k: None for k in row.cells[svc]}
        rows.append(row)
    return AncillaryServicesMatrix(rows)


@dataclass
class CampaignResult:
    cells: list[CellResult]
    capabilities: dict
    matrix: AncillaryServicesMatrix
    out: Path

    @property
    def exit_code(self) -> int:
        return 2 if any(c.failed for c in self.cells) else 0


def run_campaign(plant_path: str | Path = REFERENCE_PLANT, stacks: Sequence[str] = FRADES_STACKS,
                 services: Sequence[str] = TESTED_SERVICES, out: str | Path = "hydroflex-out",
                 dt: float | None = None, parallel: int = 1, formats: Sequence[str] = FORMATS,
                 trace_every: int = 1) -> CampaignResult:
    """Run every (stack, service) cell, write reports, traces and the matrix under ``out``.

    Reruns overwrite the same files with identical bytes.
    """
    for s in services:
        if s not in TESTED_SERVICES:
            raise ValueError(f"unknown service {s!r}; choose from {list(TESTED_SERVICES)}")
    for f in formats:
        if f not in FORMATS:
            raise ValueError(f"unknown format {f!r}; choose from {list(FORMATS)}")
    labels = [TechnologyStack.parse(s).label for s in stacks]
    plant = load_plant(plant_path)
    jobs = [(str(plant_path), lb, svc, dt) for lb in labels for svc in services]
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            cells = list(pool.map(_worker, jobs))
    else:
        cache: dict = {}
        cells = [run_cell(plant, TechnologyStack.parse(lb), svc, dt, cache) for _, lb, svc, _ in jobs]

    out = Path(out)
    for c in cells:
        d = out / "reports" / slug(c.stack)
        if c.error:
            err = ComplianceReport(c.service, False, 0.0, [Violation(0.0, "simulation", 0.0, 0.0)],
                                   details={"stack": c.stack, "error": c.error})
            artifacts.write_report(err, d, slug(c.service))
        for mode, rep in c.reports.items():
            artifacts.write_report(rep, d, f"{slug(c.service)}_{mode}", trace_every)
    caps = capabilities_of(cells)
    scoring = ScoringConfig.from_plant(plant)
    has_pump = plant.units[0].config.pump_range is not None
    matrix = build_matrix(caps, scoring, plant.name, has_pump)
    summary = {"plant": plant.name, "dt": dt or plant.dt, "stacks": labels, "services": list(services),
               "capabilities": caps, "scoring": dict(scoring.references), "has_pump": has_pump,
               "errors": {f"{c.stack}/{c.service}": c.error for c in cells if c.error}}
    artifacts.write_text(out / "capabilities.json", artifacts.dumps(summary))
    for f in formats:
        artifacts.write_text(out / f"matrix.{_EXT[f]}", render_matrix(matrix, f))
    return CampaignResult(cells, caps, matrix, out)


def matrix_from_summary(path: str | Path) -> AncillaryServicesMatrix:
    """Rebuild the matrix from a campaign's ``capabilities.json``."""
    import json
    doc = json.loads(Path(path).read_text())
    return build_matrix(doc["capabilities"], ScoringConfig(doc["scoring"]), doc["plant"], doc.get("has_pump", True))
