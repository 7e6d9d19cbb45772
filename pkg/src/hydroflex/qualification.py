"""Grid-code test scenarios run on a configured plant.

Each ``run_*`` function builds a scenario for one technology stack, simulates
it on the shared :class:`~hydroflex.plant.Simulator`, checks the response
against its envelope and returns a :class:`ComplianceReport` whose ``trace``
holds the simulation result.

All turbine and pump tests drive every unit of the plant identically and
measure the response of the first unit; the hydraulic short-circuit tests put
the first unit in turbine mode and the second in pump mode.
"""

from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .control import (
    AfrrController,
    FcrController,
    FfrController,
    HbhJointControl,
    HbhState,
    afrr_filtered_setpoint,
    afrr_raw_setpoint,
    fcr_command,
    hbh_split,
    tustin_lag,
)
from .envelopes import (
    AfrrLimits,
    ComplianceReport,
    FcrLimits,
    FfrLimits,
    Violation,
    check_afrr_envelope,
    check_fcr_envelope,
    check_ffr_envelope,
)
from .machine import Bess, bess_step
from .plant import Plant, Scenario, SimulationResult, Simulator, UnitPlan, UnitSpec

FCR_STEP_HZ = 0.2
INERTIA_ROCOF = -1.0  # Hz/s, applied for 1 s


# ---------------------------------------------------------------------- technology stacks

@dataclass(frozen=True)
class TechnologyStack:
    """Fixed (FS) or variable speed (VS with DFIM or FSFC converter) plus options."""

    speed: str = "VS"
    converter: str | None = "DFIM"
    spps: bool = False
    hsc: bool = False
    hbh: bool = False

    def __post_init__(self):
        if self.speed not in ("FS", "VS"):
            raise ValueError(f"speed technology must be FS or VS, got {self.speed!r}")
        if self.speed == "FS" and self.converter is not None:
            raise ValueError("fixed-speed stacks have no converter")
        if self.speed == "VS" and self.converter not in ("DFIM", "FSFC", None):
            raise ValueError(f"converter must be DFIM or FSFC, got {self.converter!r}")

    @property
    def variable_speed(self) -> bool:
        return self.speed == "VS"

    @property
    def label(self) -> str:
        head = self.speed if self.converter is None else f"VS({self.converter})"
        return "+".join([head] + [n for n, on in (("SPPS", self.spps), ("HSC", self.hsc), ("HBH", self.hbh)) if on])

    def __str__(self) -> str:
        return self.label

    @classmethod
    def parse(cls, text: str) -> "TechnologyStack":
        """Parse labels such as ``FS``, ``VS(DFIM)+SPPS+HSC`` or ``VS (FSFC) & SPSS``."""
        if not isinstance(text, str) or not text.strip():
            raise ValueError("empty technology stack")
        tokens = [t for t in re.split(r"\s*(?:\+|&|,)\s*", text.strip()) if t]
        m = re.fullmatch(r"(FS|VS)\s*(?:\(\s*(DFIM|FSFC)\s*\))?(?:\s+Kaplan)?", tokens[0], re.IGNORECASE)
        if not m:
            raise ValueError(f"unknown technology stack {text!r}: must start with FS, VS, VS(DFIM) or VS(FSFC)")
        speed = m.group(1).upper()
        conv = m.group(2).upper() if m.group(2) else None
        if speed == "VS" and conv is None:
            conv = "DFIM"
        if speed == "FS" and m.group(2):
            raise ValueError(f"unknown technology stack {text!r}: fixed speed has no converter")
        opts = {"spps": False, "hsc": False, "hbh": False}
        for tok in tokens[1:]:
            key = {"SPPS": "spps", "SPSS": "spps", "HSC": "hsc", "HBH": "hbh"}.get(tok.upper())
            if key is None:
                raise ValueError(f"unknown technology option {tok!r} in {text!r}")
            opts[key] = True
        return cls(speed, conv, **opts)


def configure(plant: Plant, stack: TechnologyStack) -> Plant:
    """Copy of ``plant`` whose units use the speed technology of ``stack``."""
    units = []
    for u in plant.units:
        c = u.config
        if stack.speed == "FS":
            c = dataclasses.replace(c, technology="fixed", n_min=c.n_synch, n_middle=c.n_synch, n_max=c.n_synch)
        elif stack.converter is not None and c.technology != stack.converter:
            c = dataclasses.replace(c, technology=stack.converter)
        units.append(UnitSpec(c, u.characteristic, u.machine_node))
    return Plant(plant.name, plant.network_config, units, plant.controls, plant.f_n, plant.dt, plant.extras)


def _unit_ids(plant: Plant) -> list[str]:
    return [u.config.id for u in plant.units]


def _initial_speed(cfg, strategy: str | float | None) -> float | None:
    if strategy is None or not cfg.variable_speed:
        return None
    if isinstance(strategy, str):
        try:
            return {"n_min": cfg.n_min, "n_middle": cfg.n_middle, "n_max": cfg.n_max, "n_opt": cfg.n_min}[strategy]
        except KeyError:
            raise ValueError(f"unknown initial speed strategy {strategy!r}") from None
    return float(strategy)


def _failed(service: str, quantity: str, **details) -> ComplianceReport:
    return ComplianceReport(service, False, 0.0, [Violation(0.0, quantity, 0.0, 0.0)], details=details)


def bisect_capacity(accept: Callable[[float], bool], hi: float, resolution: float, lo: float = 0.0) -> float:
    """Largest value in ``[lo, hi]`` accepted by the monotone predicate, to within ``resolution``.

    ``lo`` is taken as accepted. Returns ``hi`` when ``hi`` itself is accepted
    and ``lo`` when nothing above it is found before the bracket shrinks below
    the resolution.
    """
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    if hi <= lo:
        return lo
    if accept(hi):
        return hi
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if accept(mid):
            lo = mid
        else:
            hi = mid
    return lo


def resolution_of(plant: Plant) -> float:
    return 0.005 * plant.units[0].config.rated_power


# ---------------------------------------------------------------------- FCR

def _fcr_droop(plant: Plant, mode: str) -> float:
    c = plant.controls
    return c.fcr_droop_pump if mode == "pump" else c.fcr_droop_turbine


def _pump_base(cfg) -> float:
    return cfg.pump_p_base if cfg.pump_p_base else max(abs(p) for p in cfg.pump_range)


def fcr_band(plant: Plant, stack: TechnologyStack, mode: str = "turbine",
             droop: float | None = None, delta_f: float = FCR_STEP_HZ) -> tuple[float, float]:
    """(initial power, Rp) for a mid-range FCR test: Rp = min(droop response, headroom)."""
    cfg = plant.units[0].config
    droop = _fcr_droop(plant, mode) if droop is None else droop
    lo, hi = cfg.power_range(mode, spps=stack.spps and mode == "turbine")
    p0 = 0.5 * (lo + hi)
    base = _pump_base(cfg) if mode == "pump" else cfg.rated_power
    demand = delta_f / (droop * plant.f_n) * base
    return p0, min(demand, 0.5 * (hi - lo))


def run_fcr_test(plant: Plant, stack: TechnologyStack, direction: int = -1, mode: str = "turbine", *,
                 reserve: float | None = None, droop: float | None = None, deadband: float | None = None,
                 n_init: str | float | None = "n_middle", limits: FcrLimits = FcrLimits(), ramp_time: float = 10.0,
                 head: str = "min", dt: float | None = None) -> ComplianceReport:
    """Frequency step of ``direction * 200 mHz`` (``-1``: under-frequency, power up).

    Every unit runs the same plan; the report checks the first unit's power
    deviation against ``Rp = reserve`` (default: :func:`fcr_band`). The FCR
    setpoint crosses the full reserve in ``ramp_time`` seconds.
    """
    if direction not in (-1, 1):
        raise ValueError("direction must be -1 (under-frequency) or +1 (over-frequency)")
    if mode not in ("turbine", "pump"):
        raise ValueError("FCR test mode must be turbine or pump")
    plant = configure(plant, stack)
    cfg = plant.units[0].config
    p0, rp = fcr_band(plant, stack, mode, droop)
    if reserve is not None:
        rp = reserve
    droop = _fcr_droop(plant, mode) if droop is None else droop
    db = plant.controls.fcr_deadband if deadband is None else deadband
    base = _pump_base(cfg) if mode == "pump" else cfg.rated_power
    ctrl = FcrController(droop, base, reserve=rp, deadband=db, f_n=plant.f_n, ramp_time=ramp_time)
    duration = limits.t_r_max + limits.hold
    f_n = plant.f_n
    step = direction * FCR_STEP_HZ
    plans = {uid: UnitPlan(mode=mode, power=p0, fcr=ctrl, n_init=_initial_speed(u.config, n_init))
             for uid, u in zip(_unit_ids(plant), plant.units)}
    res = Simulator(plant, dt).run(Scenario(duration, plans, f_meas=lambda t: f_n + step if t > 0 else f_n, head=head))
    rp_signed = -direction * rp
    details = {"stack": stack.label, "mode": mode, "direction_mhz": 1000 * step, "P0": p0, "Rp": rp_signed}
    if res.aborted:
        rep = ComplianceReport("FCR", False, 0.0, [Violation(float(res.t[-1]), "simulation", 0.0, 0.0)],
                               details={**details, "aborted": res.aborted})
    else:
        u = res.units[plant.units[0].config.id]
        dP = u["P"] - u["P"][0]
        rep = check_fcr_envelope(res.t, dP, rp_signed, limits)
        rep.details = {**details, **rep.details}
        if fcr_command(ctrl, f_n + step) == 0.0 and rep.passed:
            rep = ComplianceReport("FCR", False, 0.0, [Violation(0.0, "activation", 0.0, db)], details=details)
    rep.trace = res
    return rep


def fcr_capability(plant: Plant, stack: TechnologyStack, mode: str = "turbine", **kw) -> ComplianceReport:
    """Both step directions at the mid-range band; if either fails, bisect the reserve.

    The capability is the smaller of the two sustained responses.
    """
    _, rp_full = fcr_band(configure(plant, stack), stack, mode, kw.get("droop"))

    def both(rp: float) -> dict[int, ComplianceReport]:
        return {d: run_fcr_test(plant, stack, d, mode, reserve=rp, **kw) for d in (-1, 1)}

    best = both(rp_full)
    # a unit that does not respond at all will not respond to a smaller band either
    silent = any(r.details.get("t_i") is None and r.details.get("t_r") is None for r in best.values())
    if not silent and not all(r.passed for r in best.values()):
        rp = bisect_capacity(lambda r: all(x.passed for x in both(r).values()), rp_full, resolution_of(plant))
        if rp > 0:
            best = both(rp)
    cap = min(abs(r.capability) for r in best.values())
    viol = [v for r in best.values() for v in r.violations]
    rep = ComplianceReport("FCR", not viol, cap if not viol else 0.0, viol,
                           details={"stack": stack.label, "mode": mode,
                                    "up": best[-1].details, "down": best[1].details})
    rep.trace = best[-1].trace
    return rep


# ---------------------------------------------------------------------- aFRR

def afrr_band(plant: Plant, stack: TechnologyStack, mode: str = "turbine") -> float:
    """Symmetric aFRR band PR of one unit: half its admissible range (0 for a fixed-speed pump)."""
    cfg = plant.units[0].config
    if mode == "pump" and stack.speed == "FS":
        return 0.0
    lo, hi = cfg.power_range(mode, spps=stack.spps and mode == "turbine")
    return 0.5 * (hi - lo)


def run_afrr_test(plant: Plant, stack: TechnologyStack, mode: str = "turbine", direction: int = 1, *,
                  reserve: float | None = None, limits: AfrrLimits = AfrrLimits(),
                  head: str = "min", dt: float | None = None) -> ComplianceReport:
    """Setpoint ramp of ``2 PR`` over the ramp duration from one range edge to the other.

    ``mode`` is ``turbine``, ``pump`` or ``HSC`` (first unit turbine, second
    pump, plant band = sum of both). The units follow the filtered setpoint.
    """
    if direction not in (-1, 1):
        raise ValueError("direction must be +1 (up) or -1 (down)")
    if mode not in ("turbine", "pump", "HSC"):
        raise ValueError("aFRR test mode must be turbine, pump or HSC")
    plant = configure(plant, stack)
    sim = Simulator(plant, dt)
    h = sim.dt
    n = int(round(limits.T / h))
    t = np.arange(n + 1) * h
    cfg = plant.units[0].config
    roles = ["turbine", "pump"] if mode == "HSC" else [mode] * len(plant.units)
    if mode == "HSC" and len(plant.units) < 2:
        raise ValueError("hydraulic short circuit needs two units")
    plans, raw_total, bands = {}, np.zeros_like(t), []
    measured = plant.units[:2] if mode == "HSC" else plant.units[:1]
    for spec, role in zip(plant.units, roles):
        c = spec.config
        lo, hi = c.power_range(role, spps=stack.spps and role == "turbine")
        pr = afrr_band(plant, stack, role)
        if reserve is not None and mode != "HSC":
            if reserve > 0.5 * (hi - lo) + 1e-9:
                raise ValueError(f"aFRR band {reserve:.1f} MW infeasible: range {lo:.1f}..{hi:.1f} MW at minimum head")
            pr = reserve
        if pr > 0:
            start = lo if direction > 0 else hi
            ctrl = AfrrController(pr, limits.filter_tau, limits.ramp_duration)
            raw = afrr_raw_setpoint(t, start, ctrl, direction)
            sched = _sampled(afrr_filtered_setpoint(ctrl, raw, h), h)
        else:
            # a fixed-speed pump cannot modulate and runs at full input
            raw = np.full_like(t, lo)
            sched = lo
        plans[c.id] = UnitPlan(mode=role, power=sched,
                               n_init=c.n_middle if c.variable_speed and role == "turbine" else None)
        if spec in measured:
            raw_total += raw
            bands.append(pr)
    res = sim.run(Scenario(limits.T, plans, head=head))
    pr_total = sum(bands)
    details = {"stack": stack.label, "mode": mode, "direction": direction, "PR_units": bands}
    if res.aborted:
        rep = ComplianceReport("aFRR", False, 0.0, [Violation(float(res.t[-1]), "simulation", 0.0, 0.0)],
                               details={**details, "aborted": res.aborted})
    elif pr_total <= 0:
        rep = ComplianceReport("aFRR", False, 0.0, [Violation(0.0, "band", 0.0, 0.0)],
                               details={**details, "reason": "no modulation range"})
    else:
        P = sum(res.units[s.config.id]["P"] for s in measured)
        rep = check_afrr_envelope(res.t, P, raw_total[: len(res.t)], pr_total, limits)
        rep.details = {**details, **rep.details}
    rep.trace = res
    return rep


def _sampled(values: np.ndarray, h: float) -> Callable[[float], float]:
    last = len(values) - 1

    def f(t: float) -> float:
        k = min(last, max(0, int(round(t / h))))
        return float(values[k])
    return f


def afrr_capability(plant: Plant, stack: TechnologyStack, mode: str = "turbine", **kw) -> ComplianceReport:
    """Up and down ramps; the capability is the band both directions sustain."""
    up = run_afrr_test(plant, stack, mode, 1, **kw)
    down = run_afrr_test(plant, stack, mode, -1, **kw)
    viol = up.violations + down.violations
    cap = min(up.capability, down.capability)
    rep = ComplianceReport("aFRR", not viol, cap if not viol else 0.0, viol,
                           details={"stack": stack.label, "mode": mode, "up": up.details, "down": down.details})
    rep.trace = up.trace
    return rep


# ---------------------------------------------------------------------- FFR

FFR_DURATION = 120.0


def _ffr_run(plant: Plant, capacity: float, mode: str, n_init: float | None, support: str,
             limits: FfrLimits, dt: float | None, head: str) -> tuple[SimulationResult, float]:
    cfg = plant.units[0].config
    if mode == "turbine":
        p0 = cfg.power_range("turbine")[1] - 1.2 * capacity
    else:
        p0 = cfg.power_range("pump")[0]
    f_n = plant.f_n
    level = limits.activation_level
    plans = {}
    for u in plant.units:
        plans[u.config.id] = UnitPlan(mode=mode, power=p0, n_init=n_init, strategy_switch=False,
                                      ffr=FfrController(capacity, level, support,
                                                        activation_time=limits.full_activation_max))
    sc = Scenario(FFR_DURATION, plans, f_meas=lambda t: f_n - 0.5 if t > 0 else f_n, head=head,
                  stop_on_speed_violation=True,
                  speed_limits={u.config.id: u.config.transient_limits for u in plant.units})
    return Simulator(plant, dt).run(sc), p0


def run_ffr_test(plant: Plant, stack: TechnologyStack, n_init: str | float = "n_middle", mode: str = "turbine", *,
                 capacity: float | None = None, support: str = "long", limits: FfrLimits | None = None,
                 head: str = "min", dt: float | None = None) -> ComplianceReport:
    """Largest FFR capacity whose delivery keeps the rotor within its transient speed window.

    Turbine mode starts at ``P_max - 1.2 C``; pump mode starts at full input
    power and the search is bounded by the pump band. With ``capacity`` given
    only that value is tested.
    """
    limits = limits or FfrLimits.for_support(support)
    if not stack.variable_speed:
        return _failed("FFR", "technology", stack=stack.label, mode=mode,
                       reason="fixed-speed units cannot deliver FFR")
    plant = configure(plant, stack)
    cfg = plant.units[0].config
    n0 = _initial_speed(cfg, n_init) if mode == "turbine" else None
    uid = cfg.id

    def evaluate(c: float) -> tuple[ComplianceReport, SimulationResult]:
        res, p0 = _ffr_run(plant, c, mode, n0, support, limits, dt, head)
        if res.aborted:
            return ComplianceReport("FFR", False, 0.0, [Violation(float(res.t[-1]), "speed" if res.speed_violations
                                                                  else "simulation", float(res.units[uid]["n"][-1]), 0.0)],
                                    details={"aborted": res.aborted}), res
        act = int(np.searchsorted(res.t, 1e-12))
        p = res.units[uid]["P"]
        rep = check_ffr_envelope(res.t[act:], p[act:] - p[0], c, limits)
        return rep, res

    lo, hi = cfg.power_range(mode)
    upper = (hi - lo) / 1.2 if mode == "turbine" else hi - lo
    if capacity is None:
        cap = bisect_capacity(lambda c: evaluate(c)[0].passed, upper, resolution_of(plant))
        if cap <= 0:
            rep = _failed("FFR", "capacity", stack=stack.label, mode=mode, n_init=n0,
                          reason="no capacity above the search resolution")
            return rep
        capacity = cap
    rep, res = evaluate(capacity)
    rep.details = {**rep.details, "stack": stack.label, "mode": mode, "n_init": n0, "capacity": capacity,
                   "n_range": [float(res.units[uid]["n"].min()), float(res.units[uid]["n"].max())]}
    rep.trace = res
    return rep


def ffr_capability(plant: Plant, stack: TechnologyStack, mode: str = "turbine",
                   strategies: Sequence[str] = ("n_opt", "n_middle", "n_max"), **kw) -> ComplianceReport:
    """Best FFR capacity over the initial speed strategies (turbine) or the pump test."""
    if mode == "pump" or not stack.variable_speed:
        return run_ffr_test(plant, stack, mode=mode, **kw)
    best = None
    per = {}
    for s in strategies:
        r = run_ffr_test(plant, stack, s, mode, **kw)
        per[s] = r.capability
        if best is None or r.capability > best.capability:
            best = r
    best.details = {**best.details, "by_strategy": per}
    return best


# ---------------------------------------------------------------------- black start

BLACK_START_DURATION = 60.0
FS_FREQUENCY_FLOOR = 49.0


def _black_start_ok(plant: Plant, load: float, n0: float | None, limits: tuple[float, float],
                    dt: float | None, head: str) -> tuple[bool, SimulationResult]:
    uid = plant.units[0].config.id
    plans = {uid: UnitPlan(mode="snl", n_init=n0, load=load)}
    sc = Scenario(BLACK_START_DURATION, plans, islanded=True, head=head, stop_on_speed_violation=True,
                  speed_limits={uid: limits})
    res = Simulator(plant, dt).run(sc)
    return (not res.speed_violations and res.aborted is None), res


def black_start_capacity(plant: Plant, stack: TechnologyStack, n_init: str | float | None = None, *,
                         head: str = "min", dt: float | None = None) -> ComplianceReport:
    """Largest resistive load step a unit at speed no load can pick up in an island.

    Fixed speed: the island frequency must stay at or above 49 Hz. Variable
    speed: the rotor must stay inside its transient window (DFIM) or above the
    stall speed (FSFC); without ``n_init`` the initial speeds n_min, n_middle
    and n_max are swept and the best is reported.
    """
    plant = configure(plant, stack)
    cfg = plant.units[0].config
    if stack.variable_speed and not cfg.grid_forming_capable:
        return _failed("black-start", "grid_forming", stack=stack.label,
                       reason="variable-speed unit is not grid-forming capable")
    if stack.variable_speed:
        limits = cfg.transient_limits
        speeds = [n_init] if n_init is not None else ["n_min", "n_middle", "n_max"]
    else:
        limits = (cfg.n_synch * FS_FREQUENCY_FLOOR / plant.f_n, math.inf)
        speeds = [None]
    res_mw = resolution_of(plant)
    per, best = {}, None
    for s in speeds:
        n0 = _initial_speed(cfg, s)
        cap = bisect_capacity(lambda L: _black_start_ok(plant, L, n0, limits, dt, head)[0], cfg.rated_power, res_mw)
        per[str(s if s is not None else "n_synch")] = cap
        if best is None or cap > best[0]:
            best = (cap, n0)
    cap, n0 = best
    details = {"stack": stack.label, "n_init": n0, "by_strategy": per,
               "speed_limits": [x if math.isfinite(x) else None for x in limits]}
    if cap <= 0:
        return ComplianceReport("black-start", False, 0.0, [Violation(0.0, "capacity", 0.0, res_mw)], details=details)
    _, res = _black_start_ok(plant, cap, n0, limits, dt, head)
    rep = ComplianceReport("black-start", True, cap, [], details=details)
    rep.trace = res
    return rep


# ---------------------------------------------------------------------- inertia and volt/var

def inertial_power(tau_m: float, p_base: float, rocof: float, f_n: float = 50.0) -> float:
    """Power (MW) a synchronous rotor releases for a frequency slope ``rocof`` (Hz/s).

    From the swing equation at nominal speed, ``dE/dt = J w dw/dt`` with
    ``J w_n^2 = tau_m P_base``: ``P = -tau_m P_base rocof / f_n``. A falling
    frequency (negative rocof) gives a positive injection, in turbine and pump
    mode alike.
    """
    for v in (tau_m, p_base, rocof, f_n):
        if not math.isfinite(v):
            raise ValueError("inertial power inputs must be finite")
    return -tau_m * p_base * rocof / f_n


def inertia_frequency(t: float, f_n: float = 50.0, rocof: float = INERTIA_ROCOF, t0: float = 1.0,
                      duration: float = 1.0) -> float:
    """Frequency trace for the inertia test: flat, then a ramp of ``rocof`` for ``duration`` s."""
    return f_n + rocof * min(max(t - t0, 0.0), duration)


def synthetic_inertia_test(plant: Plant, stack: TechnologyStack, *, emulation_gain: float | None = None,
                           window: float | None = None, mode: str = "turbine", tolerance: float = 0.10,
                           dt: float | None = None, head: str = "min") -> ComplianceReport:
    """Frequency ramp of 1 Hz/s for 1 s; the peak power response must match the synchronous value.

    Variable-speed units respond through inertia emulation with
    ``emulation_gain`` (default tau_m, 0 disables it). Fixed-speed units are
    locked to the grid and respond through their rotor alone.
    """
    plant = configure(plant, stack)
    if window is not None:
        plant = Plant(plant.name, plant.network_config, plant.units,
                      dataclasses.replace(plant.controls, df_window=window), plant.f_n, plant.dt, plant.extras)
    cfg = plant.units[0].config
    gain = cfg.tau_m if emulation_gain is None else emulation_gain
    lo, hi = cfg.power_range(mode)
    p0 = 0.5 * (lo + hi)
    f_n = plant.f_n
    ftrace = lambda t: inertia_frequency(t, f_n)
    plans = {u.config.id: UnitPlan(mode=mode, power=p0, inertia_gain=gain if stack.variable_speed else 0.0,
                                   strategy_switch=False)
             for u in plant.units}
    duration = 6.0
    sc = Scenario(duration, plans, f_grid=ftrace, f_meas=ftrace, head=head)
    res = Simulator(plant, dt).run(sc)
    service = "synth-inertia" if stack.variable_speed else "sync-inertia"
    ref = inertial_power(cfg.tau_m, cfg.rated_power, INERTIA_ROCOF, f_n)
    if res.aborted:
        rep = ComplianceReport(service, False, 0.0, [Violation(float(res.t[-1]), "simulation", 0.0, ref)],
                               details={"aborted": res.aborted})
        rep.trace = res
        return rep
    u = res.units[cfg.id]
    win = (res.t >= 1.0) & (res.t <= 2.5)
    dP = u["P"] - u["P"][0]
    # remove the steady response to the new frequency (pump load relief), scaled with the ramp
    settled = float(np.mean(dP[res.t >= 4.0]))
    dP = dP - settled * np.clip(res.t - 1.0, 0.0, 1.0)
    peak = float(np.max(dP[win]))
    v = []
    if abs(peak - ref) > tolerance * ref:
        k = int(np.flatnonzero(win)[np.argmax(dP[win])])
        v.append(Violation(float(res.t[k]), "peak_power", peak, ref))
    rep = ComplianceReport(service, not v, peak if not v else 0.0, v,
                           details={"stack": stack.label, "mode": mode, "reference": ref, "peak": peak,
                                    "emulation_gain": gain if stack.variable_speed else None})
    rep.trace = res
    return rep


def voltvar_capability(s_rated: float, p_max: float) -> float:
    """Reactive power (MVAr) available at maximum active power on the capability circle."""
    if s_rated < p_max:
        raise ValueError(f"apparent power {s_rated} MVA below active power {p_max} MW")
    return math.sqrt(s_rated * s_rated - p_max * p_max)


def voltvar_p_max(plant: Plant, stack: TechnologyStack, mode: str = "turbine") -> float:
    """Active power at which the reactive capability is evaluated (plant ``[voltvar]`` table, else rated)."""
    table = plant.extras.get("voltvar", {})
    key = f"p_max_{mode}_{'vs' if stack.variable_speed else 'fs'}"
    return float(table.get(key, plant.units[0].config.rated_power))


def voltvar_report(plant: Plant, stack: TechnologyStack, mode: str = "turbine") -> ComplianceReport:
    cfg = plant.units[0].config
    p = voltvar_p_max(plant, stack, mode)
    q = voltvar_capability(cfg.rated_apparent_power, p)
    return ComplianceReport("volt-var", True, q, [], details={"stack": stack.label, "mode": mode,
                                                             "S_rated": cfg.rated_apparent_power, "P_max": p})


# ---------------------------------------------------------------------- hydro-battery hybrid

@dataclass(frozen=True)
class HbhComparison:
    turbine_travel_alone: float
    turbine_travel_hybrid: float
    max_tracking_error: float
    final_soc: float

    @property
    def wear_ratio(self) -> float:
        return self.turbine_travel_hybrid / self.turbine_travel_alone if self.turbine_travel_alone else 0.0


def hbh_fcr_comparison(delta_f: Sequence[float], dt: float, droop: float, p_base: float, bess: Bess,
                       joint: HbhJointControl = HbhJointControl(), f_n: float = 50.0,
                       servo_tau: float = 2.0) -> HbhComparison:
    """Guide-vane travel for FCR provided by the turbine alone versus the turbine-battery split.

    The turbine power follows its command through a first-order servo of
    ``servo_tau``; travel is the total variation of that response in pu of
    ``p_base``. Tracking error compares turbine plus battery with the demand.
    """
    demand = np.array([-df / (droop * f_n) * p_base for df in delta_f])
    travel_alone = _servo_travel(demand, dt, servo_tau) / p_base
    st = HbhState()
    p_turb_cmd = np.empty_like(demand)
    err = 0.0
    y_t = 0.0
    prev = 0.0
    for k, (d, df) in enumerate(zip(demand, delta_f)):
        pt, pb, st = hbh_split(float(d), float(df), joint, st, bess.soc, bess.rated_power, dt)
        p_turb_cmd[k] = pt
        b = bess_step(bess, pb, dt)
        y_t = tustin_lag(y_t, prev, pt, servo_tau, dt)
        prev = pt
        err = max(err, abs(y_t + b.power - d))
    travel_hybrid = _servo_travel(p_turb_cmd, dt, servo_tau) / p_base
    return HbhComparison(travel_alone, travel_hybrid, err, bess.soc)


def _servo_travel(cmd: np.ndarray, dt: float, tau: float) -> float:
    y, prev, total = 0.0, 0.0, 0.0
    for c in cmd:
        y_new = tustin_lag(y, prev, float(c), tau, dt)
        total += abs(y_new - y)
        y, prev = y_new, float(c)
    return total
