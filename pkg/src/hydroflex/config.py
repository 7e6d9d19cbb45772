"""Plant and campaign configuration files (TOML)."""

from __future__ import annotations

import re
from dataclasses import fields
from pathlib import Path
from typing import Any

import tomli

from .control import GovernorParams
from .hydraulics import NetworkError, build_network
from .machine import MachineCharacteristic, UnitConfig
from .plant import ControlSettings, Plant, UnitSpec

DATA_DIR = Path(__file__).with_name("data")
REFERENCE_PLANT = DATA_DIR / "reference_plant.toml"


class ConfigError(ValueError):
    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line else f"{path}: "
        super().__init__(where + message)
        self.path, self.line = path, line


def _line_of(text: str, *needles: str) -> int | None:
    """1-based line of the first line containing every needle, in order of preference."""
    for ln, line in enumerate(text.splitlines(), 1):
        if all(n in line for n in needles):
            return ln
    return None


def read_toml(path: str | Path) -> tuple[dict, str]:
    p = Path(path)
    try:
        text = p.read_text()
    except FileNotFoundError:
        raise ConfigError("file not found", p) from None
    except OSError as exc:
        raise ConfigError(f"cannot read file ({exc.strerror})", p) from None
    try:
        return tomli.loads(text), text
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"parse error: {exc}", p, int(m.group(1)) if m else None) from None


_UNIT_FIELDS = {f.name for f in fields(UnitConfig)}
_GOV_FIELDS = {f.name for f in fields(GovernorParams)}
_CTRL_FIELDS = {f.name for f in fields(ControlSettings)} - {"governors"}


def _characteristic(spec: Any, base: Path) -> MachineCharacteristic:
    if isinstance(spec, str) and spec != "synthetic":
        return MachineCharacteristic.from_csv((base / spec).resolve())
    params = {} if spec == "synthetic" or spec is None else dict(spec)
    params.pop("kind", None)
    return MachineCharacteristic.synthetic_pump_turbine(**params)


def plant_from_dict(doc: dict, path: str | Path = "<memory>", text: str = "") -> Plant:
    """Build a :class:`Plant` from a parsed document, raising :class:`ConfigError` with a line hint."""
    base = Path(path).parent if path != "<memory>" else Path.cwd()
    problems = plant_diagnostics(doc, path, text)
    if problems:
        raise ConfigError("; ".join(problems))
    meta = doc.get("plant", {})
    net_cfg = {k: doc.get(k, []) for k in ("reservoir", "pipe", "surge_tank", "valve", "machine", "junction")}
    chars: dict[str, MachineCharacteristic] = {}
    units = []
    for u in doc["unit"]:
        u = dict(u)
        node = u.pop("machine_node")
        ch_spec = u.pop("characteristic", "synthetic")
        key = repr(ch_spec)
        if key not in chars:
            chars[key] = _characteristic(ch_spec, base)
        for k in ("turbine_range", "pump_range", "spps_extended_range"):
            if k in u:
                u[k] = tuple(u[k])
        units.append(UnitSpec(UnitConfig(**u), chars[key], node))
    govs = {name: GovernorParams(**vals) for name, vals in doc.get("governor", {}).items()}
    ctrl = ControlSettings(governors=govs, **doc.get("control", {}))
    extras = {k: v for k, v in doc.items()
              if k not in ("plant", "unit", "governor", "control") and k not in net_cfg}
    return Plant(meta.get("name", Path(path).stem), net_cfg, units, ctrl, f_n=meta.get("f_n", 50.0),
                 dt=meta.get("dt", 0.01), extras=extras)


def plant_diagnostics(doc: dict, path: str | Path = "<memory>", text: str = "") -> list[str]:
    """Schema and invariant checks without simulation; empty list when valid."""
    out: list[str] = []

    def at(msg: str, *needles: str) -> str:
        ln = _line_of(text, *needles) if text and needles else None
        return f"{path}:{ln}: {msg}" if ln else f"{path}: {msg}"

    units = doc.get("unit")
    if not units:
        out.append(at("no [[unit]] entries"))
        units = []
    for u in units:
        uid = u.get("id", "?")
        unknown = set(u) - _UNIT_FIELDS - {"machine_node", "characteristic"}
        if unknown:
            out.append(at(f"unit {uid}: unknown keys {sorted(unknown)}", sorted(unknown)[0]))
        if "machine_node" not in u:
            out.append(at(f"unit {uid}: missing machine_node", f'"{uid}"'))
        kw = {k: v for k, v in u.items() if k in _UNIT_FIELDS}
        for k in ("turbine_range", "pump_range", "spps_extended_range"):
            if k in kw:
                kw[k] = tuple(kw[k])
        missing = [f.name for f in fields(UnitConfig) if f.name not in kw and not _has_default(f)]
        if missing:
            out.append(at(f"unit {uid}: missing keys {missing}", f'"{uid}"'))
            continue
        try:
            UnitConfig(**kw)
        except ValueError as exc:
            for msg in str(exc).split("; "):
                key = _guess_key(msg)
                out.append(at(msg, key) if key else at(msg, f'"{uid}"'))
    for name, vals in doc.get("governor", {}).items():
        unknown = set(vals) - _GOV_FIELDS
        if unknown:
            out.append(at(f"governor.{name}: unknown keys {sorted(unknown)}", f"[governor.{name}]"))
            continue
        try:
            GovernorParams(**vals)
        except ValueError as exc:
            out.append(at(f"governor.{name}: {exc}", f"[governor.{name}]"))
    unknown = set(doc.get("control", {})) - _CTRL_FIELDS
    if unknown:
        out.append(at(f"control: unknown keys {sorted(unknown)}", "[control]"))
    net_cfg = {k: doc.get(k, []) for k in ("reservoir", "pipe", "surge_tank", "valve", "machine", "junction")}
    try:
        net = build_network(net_cfg)
        node_ids = set(net.machine_ids)
        for u in units:
            if "machine_node" in u and u["machine_node"] not in node_ids:
                out.append(at(f"unit {u.get('id', '?')}: machine node {u['machine_node']!r} not in network",
                              "machine_node", u["machine_node"]))
        dt = doc.get("plant", {}).get("dt", 0.01)
        try:
            net.check_discretisation(dt)
        except NetworkError as exc:
            out.append(at(str(exc)))
    except NetworkError as exc:
        ident = re.search(r"(?:pipe|tank|valve|reservoir|junction|element) (\S+?)[:,\s]", str(exc))
        out.append(at(str(exc), ident.group(1).strip("'\"")) if ident else at(str(exc)))
    except (KeyError, TypeError) as exc:
        out.append(at(f"malformed network description: {exc}"))
    return out


def _has_default(f) -> bool:
    from dataclasses import MISSING
    return f.default is not MISSING or f.default_factory is not MISSING


def _guess_key(msg: str) -> str | None:
    for key in ("n_middle", "n_min", "pump_range", "turbine_range", "spps_extended_range", "tau_m",
                "h_min", "technology", "rated_apparent_power", "rated_power", "stall_fraction", "converter_lag"):
        if key in msg:
            return key
    if "pump range" in msg:
        return "pump_range"
    if "turbine range" in msg:
        return "turbine_range"
    if "extended range" in msg:
        return "spps_extended_range"
    return None


def load_plant(path: str | Path = REFERENCE_PLANT) -> Plant:
    doc, text = read_toml(path)
    return plant_from_dict(doc, path, text)


def validate(path: str | Path) -> list[str]:
    """Diagnostics for a plant or manifest file (empty when valid)."""
    try:
        doc, text = read_toml(path)
    except ConfigError as exc:
        return [str(exc)]
    if "campaign" in doc:
        return manifest_diagnostics(doc, path, text)
    return plant_diagnostics(doc, path, text)


# ---------------------------------------------------------------------- manifest

SERVICES = ("sync-inertia", "synth-inertia", "FFR", "FCR", "aFRR", "mFRR", "RR", "volt-var", "black-start")
TESTED_SERVICES = ("FCR", "aFRR", "FFR", "black-start", "inertia", "volt-var")


def manifest_diagnostics(doc: dict, path: str | Path, text: str = "") -> list[str]:
    out = []
    camp = doc.get("campaign", {})

    def at(msg, *needles):
        ln = _line_of(text, *needles) if text and needles else None
        return f"{path}:{ln}: {msg}" if ln else f"{path}: {msg}"

    if "plant" not in camp:
        out.append(at("campaign.plant is required", "[campaign]"))
    stacks = camp.get("stacks", [])
    if not stacks:
        out.append(at("at least one technology stack is required", "stacks"))
    services = camp.get("services", [])
    if not services:
        out.append(at("at least one service is required", "services"))
    for s in services:
        if s not in TESTED_SERVICES:
            out.append(at(f"unknown service {s!r}; choose from {list(TESTED_SERVICES)}", "services"))
    from .qualification import TechnologyStack
    for s in stacks:
        try:
            TechnologyStack.parse(s)
        except ValueError as exc:
            out.append(at(str(exc), "stacks"))
    if "dt" in camp and not camp["dt"] > 0:
        out.append(at("dt must be positive", "dt"))
    if "plant" in camp:
        ppath = Path(path).parent / camp["plant"]
        if camp["plant"] != "reference" and not ppath.exists():
            out.append(at(f"plant file {camp['plant']!r} not found", "plant"))
    return out


def load_manifest(path: str | Path) -> dict:
    doc, text = read_toml(path)
    problems = manifest_diagnostics(doc, path, text)
    if problems:
        raise ConfigError("; ".join(problems))
    camp = dict(doc["campaign"])
    base = Path(path).parent
    camp["plant_path"] = REFERENCE_PLANT if camp["plant"] == "reference" else (base / camp["plant"]).resolve()
    if "out" in camp:
        camp["out"] = (base / camp["out"]).resolve()
    camp.setdefault("parallel", 1)
    camp.setdefault("seed", 0)
    camp["_doc"] = doc
    return camp
