"""Controllers: turbine governor, FCR droop, aFRR setpoint filter, inertia emulation,
FFR activation logic, hydraulic short-circuit dispatch, hydro-battery split and the
variable-speed strategy switch.

All controllers are small deterministic state machines stepped at the solver rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np


def tustin_lag(y0: float, u0: float, u1: float, tau: float, h: float) -> float:
    """First-order lag ``tau dy/dt = u - y`` discretised with the trapezoidal rule."""
    return ((2.0 * tau - h) * y0 + h * (u0 + u1)) / (2.0 * tau + h)


# ---------------------------------------------------------------------- governor

@dataclass(frozen=True)
class GovernorParams:
    """PID turbine governor with permanent droop.

    Gains act on a per-unit error; ``rate_open`` / ``rate_close`` limit the
    servo speed in pu/s and ``y_min`` / ``y_max`` its stroke.
    """

    kp: float = 1.0
    ki: float = 0.2
    kd: float = 0.0
    td_filter: float = 0.1
    droop: float = 0.0
    rate_open: float = 0.1
    rate_close: float = 0.1
    y_min: float = 0.0
    y_max: float = 1.0

    def __post_init__(self):
        if self.rate_open <= 0 or self.rate_close <= 0:
            raise ValueError("servo rate limits must be positive")
        if not self.y_min < self.y_max:
            raise ValueError("need y_min < y_max")
        if self.droop < 0:
            raise ValueError("droop must be >= 0")
        if self.td_filter <= 0:
            raise ValueError("derivative filter constant must be positive")


@dataclass(frozen=True)
class GovernorState:
    y: float
    integral: float
    d_state: float = 0.0
    e_prev: float = 0.0
    saturated: bool = False

    @classmethod
    def at(cls, y: float, feedforward: float = 0.0) -> "GovernorState":
        """Bumpless initial state holding opening ``y``."""
        return cls(y=y, integral=y - feedforward)


def governor_error(n_meas: float, n_ref: float, droop: float = 0.0, p_ref: float | None = None,
                   p_meas: float | None = None, p_base: float = 1.0) -> float:
    """Per-unit error: speed deviation plus permanent droop on power.

    In steady state the error vanishes, so the power settles at
    ``p_ref + (n_ref - n_meas) / n_ref / droop * p_base``.
    """
    e = (n_ref - n_meas) / n_ref
    if droop > 0 and p_ref is not None and p_meas is not None:
        e += droop * (p_ref - p_meas) / p_base
    return e


def governor_step(params: GovernorParams, state: GovernorState, error: float, dt: float,
                  feedforward: float = 0.0) -> GovernorState:
    """One PID update with clamping anti-windup and servo rate/position limits."""
    if not math.isfinite(error):
        raise ValueError("governor error must be finite")
    a = params.td_filter / (params.td_filter + dt)
    d_state = a * state.d_state + (1.0 - a) * (error - state.e_prev) / dt if params.kd else 0.0
    integral = state.integral + params.ki * error * dt
    u = feedforward + params.kp * error + integral + params.kd * d_state
    u_lim = min(params.y_max, max(params.y_min, u))
    y = min(state.y + params.rate_open * dt, max(state.y - params.rate_close * dt, u_lim))
    saturated = y != u
    if saturated and (u - y) * error > 0:
        # freeze the integrator while the output is pinned in the direction of the error
        integral = state.integral
    return GovernorState(y, integral, d_state, error, saturated)


def steady_power_target(delta_f: float, droop: float, p_base: float, f_n: float = 50.0, p_ref: float = 0.0) -> float:
    """Power the droop governor settles to after a frequency deviation ``delta_f`` (Hz)."""
    return p_ref - delta_f / (droop * f_n) * p_base


# ---------------------------------------------------------------------- FCR

@dataclass(frozen=True)
class FcrController:
    droop: float
    p_base: float
    reserve: float = math.inf
    deadband: float = 0.0
    f_n: float = 50.0
    ramp_time: float = 0.0  # time to move the command across the full reserve; 0 = no rate limit

    def __post_init__(self):
        if not self.droop > 0:
            raise ValueError("FCR droop must be positive")
        if self.reserve < 0 or self.deadband < 0:
            raise ValueError("reserve and deadband must be >= 0")
        if self.ramp_time < 0:
            raise ValueError("ramp time must be >= 0")

    def rate_limit(self, previous: float, command: float, dt: float) -> float:
        """Move from ``previous`` towards ``command`` no faster than the ramp allows."""
        if self.ramp_time == 0 or not math.isfinite(self.reserve):
            return command
        step = self.reserve * dt / self.ramp_time
        return previous + max(-step, min(step, command - previous))


def fcr_command(ctrl: FcrController, f_meas: float) -> float:
    """Droop power command ``-df / (Bs f_n) * P_base`` outside the deadband, clamped to the reserve."""
    df = f_meas - ctrl.f_n
    if abs(df) <= ctrl.deadband:
        return 0.0
    dp = -df / (ctrl.droop * ctrl.f_n) * ctrl.p_base
    return max(-ctrl.reserve, min(ctrl.reserve, dp))


# ---------------------------------------------------------------------- aFRR

@dataclass(frozen=True)
class AfrrController:
    reserve: float
    filter_tau: float = 20.0
    ramp_duration: float = 300.0

    def __post_init__(self):
        if not self.reserve > 0:
            raise ValueError("aFRR reserve band must be positive")
        if not self.filter_tau > 0:
            raise ValueError("aFRR filter constant must be positive")


def afrr_raw_setpoint(t: np.ndarray, p_start: float, ctrl: AfrrController, direction: int = 1,
                      t_start: float = 0.0) -> np.ndarray:
    """Raw setpoint P_c: ramp of ``2 PR`` over the ramp duration starting at ``t_start``."""
    frac = np.clip((np.asarray(t, float) - t_start) / ctrl.ramp_duration, 0.0, 1.0)
    return p_start + direction * 2.0 * ctrl.reserve * frac


def afrr_filtered_setpoint(ctrl: AfrrController, raw: Sequence[float], dt: float) -> np.ndarray:
    """P_tot: the raw trace through a first-order lag.

    Recurrence (trapezoidal): ``y[k+1] = ((2 tau - h) y[k] + h (u[k] + u[k+1])) / (2 tau + h)``
    with ``y[0] = u[0]``. For a ramp of slope ``s`` the asymptotic lag is exactly ``s tau``.
    """
    u = np.asarray(raw, dtype=float)
    out = np.empty_like(u)
    if u.size == 0:
        return out
    tau, h = ctrl.filter_tau, dt
    c0 = (2.0 * tau - h) / (2.0 * tau + h)
    c1 = h / (2.0 * tau + h)
    y = u[0]
    out[0] = y
    for k in range(1, u.size):
        y = c0 * y + c1 * (u[k - 1] + u[k])
        out[k] = y
    return out


# ---------------------------------------------------------------------- inertia

def inertia_emulation(rocof: float, tau_m: float, p_base: float, f_n: float = 50.0) -> float:
    """Synthetic inertia command (MW): ``-tau_m P_base (df/dt) / f_n``."""
    return -tau_m * p_base * rocof / f_n


class FilteredDifferentiator:
    """df/dt estimate ``s / (T s + 1)`` discretised with the trapezoidal rule."""

    def __init__(self, window: float = 0.1, x0: float = 0.0):
        if not window > 0:
            raise ValueError("differentiator window must be positive")
        self.window = window
        self.x = x0
        self.y = 0.0

    def step(self, x: float, dt: float) -> float:
        T = self.window
        self.y = ((2.0 * T - dt) * self.y + 2.0 * (x - self.x)) / (2.0 * T + dt)
        self.x = x
        return self.y


# ---------------------------------------------------------------------- FFR

FFR_ALTERNATIVES = {49.5: 0.70, 49.6: 1.00, 49.7: 1.30}
SUPPORT_DURATIONS = {"short": 5.0, "long": 30.0}


@dataclass
class FfrController:
    """Threshold-triggered FFR command generator.

    On the first sample at or below ``activation_level`` the command ramps to
    ``capacity`` over ``activation_time``, holds for the support duration and
    then ramps back down over ``deactivation_time`` (0 = stepwise). A new
    crossing within ``recovery_window`` of the previous activation is rejected.
    """

    capacity: float
    activation_level: float = 49.7
    support: str = "long"
    activation_time: float | None = None
    deactivation_time: float = 60.0
    recovery_window: float = 900.0
    activated_at: float | None = field(default=None, init=False)
    rejected: list = field(default_factory=list, init=False)
    _below: bool = field(default=False, init=False)

    def __post_init__(self):
        if not self.capacity > 0:
            raise ValueError("FFR capacity must be positive")
        if self.support not in SUPPORT_DURATIONS:
            raise ValueError("support must be 'short' or 'long'")
        if self.activation_time is None:
            if self.activation_level not in FFR_ALTERNATIVES:
                raise ValueError(f"activation level must be one of {sorted(FFR_ALTERNATIVES)}")
            self.activation_time = FFR_ALTERNATIVES[self.activation_level]
        if self.deactivation_time < 0:
            raise ValueError("deactivation time must be >= 0")

    @property
    def support_duration(self) -> float:
        return SUPPORT_DURATIONS[self.support]

    def command_at(self, t: float) -> float:
        if self.activated_at is None:
            return 0.0
        s = t - self.activated_at
        ta, ts, td = self.activation_time, self.support_duration, self.deactivation_time
        if s < 0:
            return 0.0
        if s < ta:
            return self.capacity * s / ta
        if s <= ta + ts:
            return self.capacity
        if td == 0 or s >= ta + ts + td:
            return 0.0
        return self.capacity * (1.0 - (s - ta - ts) / td)

    def step(self, t: float, f: float) -> float:
        below = f <= self.activation_level
        if below and not self._below:
            if self.activated_at is None or t - self.activated_at >= self.recovery_window:
                self.activated_at = t
            else:
                self.rejected.append(t)
        self._below = below
        return self.command_at(t)


def ffr_controller(t: Sequence[float], f: Sequence[float], capacity: float, activation_level: float = 49.7,
                   support: str = "long", **kw) -> np.ndarray:
    """FFR command trace for a frequency trace."""
    ctrl = FfrController(capacity, activation_level, support, **kw)
    return np.array([ctrl.step(float(ti), float(fi)) for ti, fi in zip(t, f)])


# ---------------------------------------------------------------------- HSC

@dataclass(frozen=True)
class HscUnit:
    id: str
    mode: str  # "turbine" | "pump"
    power: float  # current setpoint, MW (pump negative)
    p_low: float
    p_high: float
    variable_speed: bool = True

    @property
    def modulable(self) -> bool:
        return self.mode == "turbine" or self.variable_speed

    def headroom(self, direction: int) -> float:
        if not self.modulable:
            return 0.0
        return self.p_high - self.power if direction > 0 else self.power - self.p_low


def hsc_dispatch(plant_cmd: float, units: Sequence[HscUnit]) -> dict[str, float]:
    """Split a plant power modulation (MW, positive = more net output) across HSC units.

    Fixed-speed pumps keep their input power; every modulable unit takes a share
    proportional to its headroom in the requested direction.
    """
    modes = {u.mode for u in units}
    if not {"turbine", "pump"} <= modes:
        raise ValueError("hydraulic short circuit needs at least one turbine and one pump")
    if plant_cmd == 0:
        return {u.id: u.power for u in units}
    direction = 1 if plant_cmd > 0 else -1
    rooms = [u.headroom(direction) for u in units]
    total = sum(rooms)
    if abs(plant_cmd) > total * (1.0 + 1e-12):
        raise ValueError(f"command {plant_cmd:.2f} MW outside combined range ±{total:.2f} MW")
    return {u.id: u.power + plant_cmd * r / total for u, r in zip(units, rooms)}


def hsc_band(units: Iterable[HscUnit]) -> float:
    """Symmetric plant band: sum over units of the smaller headroom."""
    return sum(min(u.headroom(1), u.headroom(-1)) for u in units)


# ---------------------------------------------------------------------- HBH

@dataclass(frozen=True)
class HbhJointControl:
    split_tau: float = 30.0
    turbine_deadband: float = 0.01
    soc_gain: float = 0.1
    soc_target: float = 0.5

    def __post_init__(self):
        if not self.split_tau > 0:
            raise ValueError("split filter constant must be positive")
        if self.turbine_deadband < 0 or self.soc_gain < 0:
            raise ValueError("deadband and soc gain must be >= 0")


@dataclass(frozen=True)
class HbhState:
    turbine_lp: float = 0.0
    demand_prev: float = 0.0


def hbh_split(demand: float, delta_f: float, joint: HbhJointControl, state: HbhState, soc: float,
              bess_rated: float, dt: float) -> tuple[float, float, HbhState]:
    """Split an FCR demand between turbine and battery.

    The turbine follows a low-pass of the demand (zero while the frequency sits
    inside its deadband); the battery takes the remainder. A bias proportional
    to the soc error moves power from battery to turbine, and whatever exceeds
    the battery rating or its energy limits spills to the turbine, so the two
    commands always sum to ``demand``.
    """
    turbine_in = demand if abs(delta_f) > joint.turbine_deadband else 0.0
    lp = tustin_lag(state.turbine_lp, state.demand_prev, turbine_in, joint.split_tau, dt)
    bias = joint.soc_gain * (joint.soc_target - soc) * bess_rated
    p_turb = lp + bias
    p_bess = demand - p_turb
    limit_hi = bess_rated if soc > 0.0 else 0.0
    limit_lo = -bess_rated if soc < 1.0 else 0.0
    clipped = min(limit_hi, max(limit_lo, p_bess))
    p_turb += p_bess - clipped
    return p_turb, clipped, HbhState(lp, turbine_in)


# ---------------------------------------------------------------------- strategy switch

@dataclass
class StrategySwitch:
    """Supervisor for variable-speed units.

    In ``power`` mode the converter tracks the power setpoint and the turbine
    governor holds speed. When speed leaves ``[n_low, n_high]`` the roles swap:
    the converter holds the violated limit and the governor tracks power. The
    switch back happens once the speed-holding converter command has crossed
    the setpoint, i.e. the setpoint is achievable again; re-entry is armed only
    after the speed has moved back inside the window by the hysteresis band.
    """

    n_low: float
    n_high: float
    hysteresis: float = 0.01
    enabled: bool = True
    mode: str = "power"
    hold: float = 0.0
    side: int = 0
    armed: bool = True
    events: list = field(default_factory=list)

    def update(self, t: float, n: float, p_set: float, p_speed_ctrl: float) -> str:
        if not self.enabled:
            return self.mode
        if self.mode == "power":
            if not self.armed:
                lo = self.n_low * (1.0 + self.hysteresis)
                hi = self.n_high * (1.0 - self.hysteresis)
                if lo <= n <= hi:
                    self.armed = True
            if self.armed and (n < self.n_low or n > self.n_high):
                self.mode = "speed"
                self.side = -1 if n < self.n_low else 1
                self.hold = self.n_low if self.side < 0 else self.n_high
                self.events.append((t, "speed"))
        else:
            # underspeed: converter gives less than asked; done once it could give p_set
            done = p_speed_ctrl >= p_set if self.side < 0 else p_speed_ctrl <= p_set
            if done:
                self.mode = "power"
                self.armed = False
                self.events.append((t, "power"))
        return self.mode
