"""Plant assembly and the coupled hydraulic / electromechanical simulation loop.

Each solver step is partitioned:

1. grid frequency and controller inputs at ``t1``;
2. controllers update (guide-vane opening, converter setpoint) from the
   measurements at ``t0``;
3. rotor speed predicted as ``n* = n0 + dt * dn0/dt``;
4. implicit hydraulic step with machine flows evaluated at ``(n*, y1)``;
5. electrical update (converter lag, grid lock or islanded load);
6. swing-equation corrector with trapezoidal mean torques.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.optimize import brentq

from .control import (
    FcrController,
    FfrController,
    FilteredDifferentiator,
    GovernorParams,
    GovernorState,
    StrategySwitch,
    fcr_command,
    governor_step,
    inertia_emulation,
)
from .hydraulics import (
    HydraulicNetwork,
    SimulationError,
    TransientSolver,
    _make_state,
    build_network,
    check_tanks,
    steady_state,
    throttle_flow,
    valve_flow,
)
from .machine import MachineCharacteristic, StallError, UnitConfig, rpm_to_rad

Schedule = Callable[[float], float]


class SpeedLimitError(SimulationError):
    """Rotor speed left the admissible transient window."""

    def __init__(self, unit: str, n: float, bound: float, time: float):
        super().__init__(f"unit {unit}: speed {n:.2f} rpm beyond limit {bound:.2f} rpm", time)
        self.unit, self.n, self.bound = unit, n, bound


def _as_schedule(v) -> Schedule:
    if callable(v):
        return v
    c = float(v)
    return lambda t: c


@dataclass
class UnitSpec:
    config: UnitConfig
    characteristic: MachineCharacteristic
    machine_node: str


@dataclass
class ControlSettings:
    governors: dict[str, GovernorParams]
    speed_mode_gain: float = 20.0
    switch_hysteresis: float = 0.01
    fcr_droop_turbine: float = 0.0085
    fcr_droop_pump: float = 0.035
    fcr_deadband: float = 0.0
    df_window: float = 0.1
    pump_opening: float = 0.95

    def governor(self, name: str) -> GovernorParams:
        try:
            return self.governors[name]
        except KeyError:
            raise KeyError(f"no governor parameter set {name!r}") from None


@dataclass
class Plant:
    name: str
    network_config: dict
    units: list[UnitSpec]
    controls: ControlSettings
    f_n: float = 50.0
    dt: float = 0.01
    extras: dict = field(default_factory=dict)
    _networks: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        ids = [u.config.id for u in self.units]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate unit ids")
        net = self.network("min")
        for u in self.units:
            if u.machine_node not in net.machine_ids:
                raise ValueError(f"unit {u.config.id}: machine node {u.machine_node!r} not in network")

    def network(self, head: str = "min") -> HydraulicNetwork:
        if head not in self._networks:
            base = self._networks.get("_base")
            if base is None:
                base = build_network(self.network_config)
                self._networks["_base"] = base
            self._networks[head] = base.with_head_condition(head)
        return self._networks[head]

    def unit(self, uid: str) -> UnitSpec:
        for u in self.units:
            if u.config.id == uid:
                return u
        raise KeyError(uid)

    def gross_head(self, head: str = "min") -> float:
        net = self.network(head)
        fixed = net.fixed_heads[net.fixed_mask]
        return float(fixed.max() - fixed.min())


# ---------------------------------------------------------------------- scenario

@dataclass
class UnitPlan:
    """What one unit does during a scenario.

    ``mode`` is ``turbine``, ``pump``, ``snl`` (speed no load) or ``off``.
    ``power`` is the base power schedule (MW, pump negative). In an islanded
    scenario ``load`` is the resistive load schedule the unit must serve.
    """

    mode: str = "turbine"
    power: float | Schedule = 0.0
    n_init: float | None = None
    governor: str | None = None
    fcr: FcrController | None = None
    inertia_gain: float = 0.0
    ffr: FfrController | None = None
    extra: Schedule | None = None
    load: float | Schedule | None = None
    strategy_switch: bool = True

    def __post_init__(self):
        if self.mode not in ("turbine", "pump", "snl", "off"):
            raise ValueError(f"unknown unit mode {self.mode!r}")


@dataclass
class Scenario:
    duration: float
    plans: dict[str, UnitPlan]
    f_grid: Schedule | None = None
    f_meas: Schedule | None = None
    islanded: bool = False
    head: str = "min"
    stop_on_speed_violation: bool = False
    speed_limits: dict[str, tuple[float, float]] | None = None


@dataclass
class SimulationResult:
    t: np.ndarray
    f: np.ndarray
    units: dict[str, dict[str, np.ndarray]]
    speed_violations: list
    switch_events: dict[str, list]
    aborted: str | None = None

    def column_names(self) -> list[str]:
        cols = ["t_s", "f_hz"]
        for uid in self.units:
            cols += [f"{uid}_n_rpm", f"{uid}_P_MW", f"{uid}_Q_m3s", f"{uid}_H_m", f"{uid}_y_pu"]
        return cols

    def table(self) -> np.ndarray:
        cols = [self.t, self.f]
        for rec in self.units.values():
            cols += [rec["n"], rec["P"], rec["Q"], rec["H"], rec["y"]]
        return np.column_stack(cols)


# ---------------------------------------------------------------------- runtime

class _UnitRuntime:
    """Mutable per-unit simulation state (internal)."""

    def __init__(self, spec: UnitSpec, plan: UnitPlan, plant: Plant, islanded: bool):
        self.spec = spec
        self.cfg = spec.config
        self.char = spec.characteristic
        self.plan = plan
        self.islanded = islanded
        self.J = self.cfg.inertia
        self.mode = plan.mode
        self.sign = -1.0 if plan.mode == "pump" else 1.0
        self.p_sched = _as_schedule(plan.power)
        self.load = _as_schedule(plan.load) if plan.load is not None else None
        c = plant.controls
        vs = self.cfg.variable_speed
        if plan.governor is not None:
            gname = plan.governor
        elif islanded:
            gname = "isolated" if vs else "fs_isolated"
        else:
            gname = "grid" if vs else "fs"
        self.gov = c.governor(gname) if plan.mode in ("turbine", "snl") else None
        self.gov_power = c.governors.get("power")
        self.speed_gain = c.speed_mode_gain
        self.switch = None
        if vs and plan.mode == "turbine" and not islanded:
            lo, hi = self.cfg.n_min, self.cfg.n_max
            self.switch = StrategySwitch(lo, hi, c.switch_hysteresis, enabled=plan.strategy_switch)
        self.diff = FilteredDifferentiator(c.df_window) if plan.inertia_gain else None
        self.f_n = plant.f_n
        # live state
        self.fcr_out = 0.0
        self.n = 0.0
        self.ndot = 0.0
        self.y = 0.0
        self.gstate: GovernorState | None = None
        self.n_ref = 0.0
        self.p_elec = 0.0
        self.p_cmd = 0.0
        self.t_mech = 0.0
        self.t_elec = 0.0
        self.q = 0.0
        self.h = 0.0

    @property
    def running(self) -> bool:
        return self.mode != "off"

    @property
    def omega(self) -> float:
        return rpm_to_rad(self.n)

    @property
    def p_mech(self) -> float:
        return self.t_mech * rpm_to_rad(self.n) / 1e6


def _operating_power(char: MachineCharacteristic, n: float, head: float, y: float) -> float:
    _, T, _ = char.operating_point(n, head, y)
    return T * rpm_to_rad(n) / 1e6


class Simulator:
    """Runs :class:`Scenario` objects on a :class:`Plant`."""

    def __init__(self, plant: Plant, dt: float | None = None):
        self.plant = plant
        self.dt = plant.dt if dt is None else dt
        self._solvers: dict[str, TransientSolver] = {}

    def _solver(self, head: str) -> TransientSolver:
        if head not in self._solvers:
            self._solvers[head] = TransientSolver(self.plant.network(head), self.dt)
        return self._solvers[head]

    # ------------------------------------------------------------------ initial state
    def _machine_law(self, rt: _UnitRuntime):
        if not rt.running:
            return lambda dh: (0.0, 0.0)
        return rt.char.flow_law(rt.n, rt.y)

    def _solve_hydraulics(self, net: HydraulicNetwork, units: list[_UnitRuntime]):
        laws = {rt.spec.machine_node: self._machine_law(rt) for rt in units}
        return steady_state(net, laws)

    def initialise(self, scenario: Scenario) -> tuple[list[_UnitRuntime], object]:
        plant = self.plant
        net = plant.network(scenario.head)
        units = []
        for spec in plant.units:
            plan = scenario.plans.get(spec.config.id, UnitPlan(mode="off"))
            rt = _UnitRuntime(spec, plan, plant, scenario.islanded)
            cfg = spec.config
            if rt.mode == "off":
                rt.n, rt.y = 0.0, 0.0
            else:
                n0 = plan.n_init if plan.n_init is not None else (cfg.n_middle if cfg.variable_speed else cfg.n_synch)
                if not cfg.variable_speed:
                    f0 = scenario.f_grid(0.0) if scenario.f_grid else plant.f_n
                    n0 = cfg.n_synch * f0 / plant.f_n
                rt.n = rt.sign * n0
                rt.n_ref = n0
                rt.y = plant.controls.pump_opening if rt.mode == "pump" else 0.5
            units.append(rt)

        # outer iteration: adjust the free variable of each unit to meet its power target
        head_guess = {rt.cfg.id: plant.gross_head(scenario.head) for rt in units}
        for outer in range(30):
            state = self._solve_hydraulics(net, units)
            moved = 0.0
            for rt in units:
                if not rt.running:
                    continue
                H = state.machine_head(rt.spec.machine_node)
                head_guess[rt.cfg.id] = H
                target = 0.0 if rt.mode == "snl" else rt.p_sched(0.0)
                if rt.mode == "pump":
                    if rt.cfg.variable_speed:
                        new_n = self._solve_pump_speed(rt, H, target)
                        moved = max(moved, abs(new_n - rt.n) / rt.cfg.n_synch)
                        rt.n = new_n
                        rt.n_ref = abs(new_n)
                    continue
                new_y = self._solve_opening(rt, H, target)
                moved = max(moved, abs(new_y - rt.y))
                rt.y = new_y
            if moved < 1e-11:
                break
        else:
            raise SimulationError("initial operating point did not converge")
        state = self._solve_hydraulics(net, units)
        for rt in units:
            if not rt.running:
                continue
            rt.h = state.machine_head(rt.spec.machine_node)
            rt.q, rt.t_mech, _ = rt.char.operating_point(rt.n, rt.h, rt.y)
            rt.p_elec = rt.p_mech
            rt.p_cmd = rt.p_elec
            rt.t_elec = rt.t_mech
            if rt.gov is not None:
                rt.gstate = GovernorState.at(rt.y)
            if rt.diff is not None:
                f0 = scenario.f_grid(0.0) if scenario.f_grid else plant.f_n
                rt.diff.x = f0
        return units, state

    def _solve_opening(self, rt: _UnitRuntime, head: float, target: float) -> float:
        lo, hi = rt.gov.y_min if rt.gov else 0.0, rt.gov.y_max if rt.gov else 1.0
        f = lambda y: _operating_power(rt.char, rt.n, head, y) - target
        flo, fhi = f(lo), f(hi)
        if flo > 0 or fhi < 0:
            raise SimulationError(
                f"unit {rt.cfg.id}: {target:.1f} MW not reachable at {abs(rt.n):.1f} rpm and {head:.1f} m "
                f"(range {flo + target:.1f}..{fhi + target:.1f} MW)")
        return brentq(f, lo, hi, xtol=1e-14, rtol=1e-14)

    def _solve_pump_speed(self, rt: _UnitRuntime, head: float, target: float) -> float:
        cfg = rt.cfg
        lo, hi = cfg.transient_limits
        f = lambda n: _operating_power(rt.char, -n, head, rt.y) - target
        flo, fhi = f(lo), f(hi)
        # pump power becomes more negative with speed
        if flo < 0 or fhi > 0:
            raise SimulationError(f"unit {cfg.id}: pump input {target:.1f} MW not reachable at {head:.1f} m")
        return -brentq(f, lo, hi, xtol=1e-12, rtol=1e-14)

    # ------------------------------------------------------------------ run
    def run(self, scenario: Scenario) -> SimulationResult:
        plant = self.plant
        dt = self.dt
        net = plant.network(scenario.head)
        solver = self._solver(scenario.head)
        units, st0 = self.initialise(scenario)
        by_node = {rt.spec.machine_node: rt for rt in units}
        f_grid = scenario.f_grid or (lambda t: plant.f_n)
        f_meas = scenario.f_meas or f_grid

        # algebraic branch laws in network order
        branch_fns = []
        for br in net.alg:
            el = net.elements[br.element]
            if br.kind == "machine":
                rt = by_node.get(br.element)
                branch_fns.append(("m", rt))
            elif br.kind == "valve":
                branch_fns.append(("v", el))
            else:
                branch_fns.append(("t", el))
        n_alg = len(branch_fns)

        def law(dh, t):
            q = np.empty(n_alg)
            dq = np.empty(n_alg)
            for k, (kind, obj) in enumerate(branch_fns):
                d = float(dh[k])
                if kind == "m":
                    if obj is None or not obj.running:
                        q[k], dq[k] = 0.0, 0.0
                        continue
                    ch = obj.char
                    qq, _, dqq, _ = ch.lookup_pu(obj.n_pred / ch.n_ref, d / ch.h_ref, obj.y)
                    q[k], dq[k] = qq * ch.q_ref, dqq * ch.q_ref / ch.h_ref
                elif kind == "v":
                    q[k], dq[k] = valve_flow(obj.opening, obj.discharge_area, d)
                else:
                    q[k], dq[k] = throttle_flow(obj.throttle_loss, obj.cross_section, d)
            return q, dq

        for rt in units:
            rt.n_pred = rt.n
        x = st0.x
        q_alg, _ = law(solver.alg_dh(x), 0.0)
        f_rates = solver.rates(x, q_alg)

        n_steps = int(round(scenario.duration / dt))
        t_arr = np.arange(n_steps + 1) * dt
        f_arr = np.empty(n_steps + 1)
        rec = {rt.cfg.id: {k: np.empty(n_steps + 1) for k in ("n", "P", "Q", "H", "y", "Pm", "Pcmd")}
               for rt in units}
        limits = {}
        for rt in units:
            if scenario.speed_limits and rt.cfg.id in scenario.speed_limits:
                limits[rt.cfg.id] = scenario.speed_limits[rt.cfg.id]
            elif rt.running and rt.mode != "pump" and (rt.cfg.variable_speed or scenario.islanded):
                limits[rt.cfg.id] = rt.cfg.transient_limits
        violations: list = []
        aborted = None

        def record(k: int, f_now: float):
            f_arr[k] = f_now
            for rt in units:
                r = rec[rt.cfg.id]
                r["n"][k] = abs(rt.n)
                r["P"][k] = rt.p_elec
                r["Q"][k] = rt.q
                r["H"][k] = rt.h
                r["y"][k] = rt.y
                r["Pm"][k] = rt.p_mech
                r["Pcmd"][k] = rt.p_cmd

        f_prev = f_grid(0.0)
        if scenario.islanded:
            f_prev = self._island_frequency(units, plant.f_n)
        record(0, f_prev)
        last = n_steps
        try:
            for k in range(1, n_steps + 1):
                t0 = (k - 1) * dt
                t1 = k * dt
                fg1 = f_grid(t1)
                fm1 = f_meas(t1)
                # 2. controllers
                for rt in units:
                    if rt.running:
                        self._control(rt, t1, fm1, dt, scenario)
                # 3. speed predictor
                for rt in units:
                    if not rt.running:
                        continue
                    if not rt.cfg.variable_speed and not scenario.islanded:
                        rt.n_pred = rt.sign * rt.cfg.n_synch * fg1 / plant.f_n
                    else:
                        rt.n_pred = rt.n + dt * rt.ndot
                # 4. hydraulics
                x, f_rates, q_alg = solver.advance(x, f_rates, law, t1)
                h_all = net.full_heads(x)
                # 5-6. electrical update and swing corrector
                for kk, (kind, rt) in enumerate(branch_fns):
                    if kind != "m" or rt is None or not rt.running:
                        continue
                    br = net.alg[kk]
                    rt.h = float(h_all[br.a] - h_all[br.b])
                    rt.q = float(q_alg[kk])
                    self._electrical(rt, t1, fg1, f_prev, dt, scenario)
                for rt in units:
                    if rt.running and rt.cfg.technology == "FSFC" and abs(rt.n) < rt.cfg.stall_fraction * rt.cfg.n_synch:
                        raise StallError(f"unit {rt.cfg.id} stalled at {abs(rt.n):.1f} rpm", t1)
                f_now = self._island_frequency(units, plant.f_n) if scenario.islanded else fg1
                record(k, f_now)
                f_prev = fg1
                for uid, (lo, hi) in limits.items():
                    n = rec[uid]["n"][k]
                    if n < lo or n > hi:
                        violations.append((t1, uid, n, lo if n < lo else hi))
                        if scenario.stop_on_speed_violation:
                            raise SpeedLimitError(uid, n, lo if n < lo else hi, t1)
                if k % 50 == 0:
                    check_tanks(net, _make_state(net, t1, x, f_rates, q_alg))
        except SimulationError as exc:
            aborted = str(exc)
            last = k - 1
            if isinstance(exc, SpeedLimitError):
                last = k
        sl = slice(0, last + 1)
        return SimulationResult(
            t_arr[sl], f_arr[sl], {u: {kk: v[sl] for kk, v in r.items()} for u, r in rec.items()},
            violations, {rt.cfg.id: list(rt.switch.events) if rt.switch else [] for rt in units}, aborted)

    @staticmethod
    def _island_frequency(units, f_n):
        for rt in units:
            if rt.running:
                return f_n * abs(rt.n) / (rt.n_ref if rt.cfg.variable_speed else rt.cfg.n_synch)
        return f_n

    # ------------------------------------------------------------------ per-unit logic
    def _service_power(self, rt: _UnitRuntime, t: float, f_m: float, dt: float) -> float:
        plan = rt.plan
        dp = 0.0
        if plan.fcr is not None:
            rt.fcr_out = plan.fcr.rate_limit(rt.fcr_out, fcr_command(plan.fcr, f_m), dt)
            dp += rt.fcr_out
        if rt.diff is not None:
            rocof = rt.diff.step(f_m, dt)
            dp += inertia_emulation(rocof, plan.inertia_gain, rt.cfg.rated_power, self.plant.f_n)
        if plan.ffr is not None:
            dp += plan.ffr.step(t, f_m)
        if plan.extra is not None:
            dp += plan.extra(t)
        return dp

    def _control(self, rt: _UnitRuntime, t1: float, f_m: float, dt: float, scenario: Scenario) -> None:
        cfg = rt.cfg
        plan = rt.plan
        p_base = cfg.rated_power
        if rt.mode == "pump":
            # guide vanes parked; variable-speed converter sets the input power
            rt.p_cmd = rt.p_sched(t1) + self._service_power(rt, t1, f_m, dt)
            return
        if scenario.islanded:
            err = (rt.n_ref - abs(rt.n)) / rt.n_ref
            rt.gstate = governor_step(rt.gov, rt.gstate, err, dt)
            rt.y = rt.gstate.y
            rt.p_cmd = rt.load(t1) if rt.load else 0.0
            return
        p_set = (0.0 if rt.mode == "snl" else rt.p_sched(t1)) + self._service_power(rt, t1, f_m, dt)
        if not cfg.variable_speed:
            err = (p_set - rt.p_mech) / p_base
            rt.gstate = governor_step(rt.gov, rt.gstate, err, dt)
            rt.y = rt.gstate.y
            rt.p_cmd = p_set
            return
        sw = rt.switch
        p_speed = rt.p_mech + self.plant.controls.speed_mode_gain * (abs(rt.n) - sw.hold) / cfg.n_synch * p_base \
            if sw.mode == "speed" else rt.p_mech
        mode = sw.update(t1, abs(rt.n), p_set, p_speed)
        if mode == "speed":
            p_speed = rt.p_mech + self.plant.controls.speed_mode_gain * (abs(rt.n) - sw.hold) / cfg.n_synch * p_base
            gp = rt.gov_power or rt.gov
            err = (p_set - rt.p_mech) / p_base
            rt.gstate = governor_step(gp, rt.gstate, err, dt)
            rt.p_cmd = p_speed
        else:
            err = (rt.n_ref - abs(rt.n)) / rt.n_ref
            rt.gstate = governor_step(rt.gov, rt.gstate, err, dt)
            rt.p_cmd = p_set
        rt.y = rt.gstate.y

    def _electrical(self, rt: _UnitRuntime, t1: float, fg1: float, fg0: float, dt: float, scenario: Scenario) -> None:
        cfg = rt.cfg
        _, tq, _ = rt.char.operating_point(rt.n_pred, rt.h, rt.y)
        tm0, te0 = rt.t_mech, rt.t_elec
        rt.t_mech = tq
        if not cfg.variable_speed and not scenario.islanded:
            n1 = rt.sign * cfg.n_synch * fg1 / self.plant.f_n
            w0, w1 = rpm_to_rad(rt.n), rpm_to_rad(n1)
            dE = 0.5 * rt.J * (w1 * w1 - w0 * w0)
            rt.p_elec = tq * w1 / 1e6 - dE / dt / 1e6
            rt.t_elec = rt.p_elec * 1e6 / w1
            rt.ndot = (n1 - rt.n) / dt
            rt.n = n1
            return
        if scenario.islanded:
            rt.p_elec = rt.p_cmd
        else:
            a = math.exp(-dt / cfg.converter_lag)
            rt.p_elec = rt.p_cmd + (rt.p_elec - rt.p_cmd) * a
        w0 = rpm_to_rad(rt.n)
        w_pred = rpm_to_rad(rt.n_pred)
        te1 = rt.p_elec * 1e6 / w_pred
        w1 = w0 + dt / rt.J * (0.5 * (tm0 + tq) - 0.5 * (te0 + te1))
        n1 = w1 * 30.0 / math.pi
        rt.t_elec = te1
        rt.ndot = (rt.t_mech - te1) / rt.J * 30.0 / math.pi
        rt.n = n1
