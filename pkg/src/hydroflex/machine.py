"""Hydro unit model: quasi-static machine characteristic, rotor swing equation,
electrical coupling for fixed- and variable-speed units, and battery storage.

Sign convention follows the turbine quadrant: discharge and torque are positive
when generating. In pump mode the runner turns backwards (negative speed in
the characteristic), discharge is negative and the torque positive, so the
shaft power ``T * omega`` is negative.
"""

from __future__ import annotations

import csv
import io
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .hydraulics import G, SimulationError

RHO = 1000.0


def rpm_to_rad(n: float) -> float:
    return n * math.pi / 30.0


class StallError(SimulationError):
    """Full-size-converter unit fell below its stall speed."""


def _locate(grid: Sequence[float], x: float):
    if x <= grid[0]:
        return 0, 0.0, x < grid[0]
    if x >= grid[-1]:
        return len(grid) - 2, 1.0, x > grid[-1]
    i = bisect_right(grid, x) - 1
    return i, (x - grid[i]) / (grid[i + 1] - grid[i]), False


@dataclass
class MachineCharacteristic:
    """Tabulated quasi-static characteristic on a regular (n, h, y) grid.

    Tables hold per-unit discharge ``q = Q / Q_ref`` and torque
    ``t = T / T_ref`` at speed ``n = N / N_ref`` and head ``h = H / H_ref``.
    Pump-mode entries sit at negative ``n``.
    """

    n_grid: Sequence[float]
    h_grid: Sequence[float]
    y_grid: Sequence[float]
    q_table: np.ndarray
    t_table: np.ndarray
    n_ref: float
    h_ref: float
    q_ref: float
    t_ref: float
    specific_speed: float = 0.0
    _q: list = field(init=False, repr=False)
    _t: list = field(init=False, repr=False)

    def __post_init__(self):
        self.n_grid = tuple(float(v) for v in self.n_grid)
        self.h_grid = tuple(float(v) for v in self.h_grid)
        self.y_grid = tuple(float(v) for v in self.y_grid)
        self.q_table = np.asarray(self.q_table, dtype=float)
        self.t_table = np.asarray(self.t_table, dtype=float)
        shape = (len(self.n_grid), len(self.h_grid), len(self.y_grid))
        if self.q_table.shape != shape or self.t_table.shape != shape:
            raise ValueError(f"table shape must be {shape}")
        for g in (self.n_grid, self.h_grid, self.y_grid):
            if len(g) < 2 or any(b <= a for a, b in zip(g, g[1:])):
                raise ValueError("grid axes need at least two strictly increasing values")
        if min(self.n_ref, self.h_ref, self.q_ref, self.t_ref) <= 0:
            raise ValueError("reference values must be positive")
        # nested lists make scalar lookups several times faster than numpy indexing
        self._q = self.q_table.tolist()
        self._t = self.t_table.tolist()

    # ------------------------------------------------------------------ lookup
    def lookup_pu(self, n: float, h: float, y: float):
        """Trilinear interpolation in per-unit; returns ``(q, t, dq/dh, extrapolated)``.

        Outside the grid hull the arguments are clamped to the boundary and
        ``extrapolated`` is True.
        """
        i, fn, on = _locate(self.n_grid, n)
        j, fh, oh = _locate(self.h_grid, h)
        k, fy, oy = _locate(self.y_grid, y)
        Q, T = self._q, self._t
        gn, gy = 1.0 - fn, 1.0 - fy
        q_lo = (gn * (gy * Q[i][j][k] + fy * Q[i][j][k + 1])
                + fn * (gy * Q[i + 1][j][k] + fy * Q[i + 1][j][k + 1]))
        q_hi = (gn * (gy * Q[i][j + 1][k] + fy * Q[i][j + 1][k + 1])
                + fn * (gy * Q[i + 1][j + 1][k] + fy * Q[i + 1][j + 1][k + 1]))
        t_lo = (gn * (gy * T[i][j][k] + fy * T[i][j][k + 1])
                + fn * (gy * T[i + 1][j][k] + fy * T[i + 1][j][k + 1]))
        t_hi = (gn * (gy * T[i][j + 1][k] + fy * T[i][j + 1][k + 1])
                + fn * (gy * T[i + 1][j + 1][k] + fy * T[i + 1][j + 1][k + 1]))
        q = q_lo + fh * (q_hi - q_lo)
        t = t_lo + fh * (t_hi - t_lo)
        dqdh = (q_hi - q_lo) / (self.h_grid[j + 1] - self.h_grid[j])
        return q, t, dqdh, on or oh or oy

    def operating_point(self, n_rpm: float, head: float, y: float):
        """Discharge (m3/s), torque (N m) and extrapolation flag at speed, net head and opening."""
        q, t, _, ext = self.lookup_pu(n_rpm / self.n_ref, head / self.h_ref, y)
        return q * self.q_ref, t * self.t_ref, ext

    def flow_law(self, n_rpm: float, y: float):
        """Closure ``H -> (Q, dQ/dH)`` for the hydraulic solver."""
        n_pu = n_rpm / self.n_ref
        h_ref, q_ref = self.h_ref, self.q_ref

        def law(head: float):
            q, _, dq, _ = self.lookup_pu(n_pu, head / h_ref, y)
            return q * q_ref, dq * q_ref / h_ref

        return law

    def monotone_in_y(self, n_min: float = 0.0) -> bool:
        """True if discharge and torque are non-decreasing in y wherever ``n >= n_min`` (turbine side)."""
        sel = np.asarray(self.n_grid) >= n_min
        dq = np.diff(self.q_table[sel], axis=2)
        dt = np.diff(self.t_table[sel], axis=2)
        return bool(np.all(dq >= -1e-12) and np.all(dt >= -1e-12))

    # ------------------------------------------------------------------ io
    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        buf.write(f"# n_ref_rpm={self.n_ref!r}\n# h_ref_m={self.h_ref!r}\n")
        buf.write(f"# q_ref_m3s={self.q_ref!r}\n# t_ref_Nm={self.t_ref!r}\n")
        buf.write(f"# specific_speed={self.specific_speed!r}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n_pu", "h_pu", "y_pu", "q_pu", "t_pu"])
        for i, n in enumerate(self.n_grid):
            for j, h in enumerate(self.h_grid):
                for k, y in enumerate(self.y_grid):
                    w.writerow([repr(n), repr(h), repr(y), repr(float(self.q_table[i, j, k])),
                                repr(float(self.t_table[i, j, k]))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path: str | Path) -> "MachineCharacteristic":
        meta: dict[str, float] = {}
        rows = []
        with open(path, newline="") as fh:
            lines = [ln for ln in fh]
        body = []
        for ln in lines:
            if ln.startswith("#"):
                key, _, val = ln[1:].strip().partition("=")
                meta[key.strip()] = float(val)
            elif ln.strip():
                body.append(ln)
        reader = csv.DictReader(body)
        missing = {"n_pu", "h_pu", "y_pu", "q_pu", "t_pu"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for r in reader:
            rows.append(tuple(float(r[c]) for c in ("n_pu", "h_pu", "y_pu", "q_pu", "t_pu")))
        ns = sorted({r[0] for r in rows})
        hs = sorted({r[1] for r in rows})
        ys = sorted({r[2] for r in rows})
        if len(rows) != len(ns) * len(hs) * len(ys):
            raise ValueError(f"{path}: rows do not form a complete grid")
        q = np.full((len(ns), len(hs), len(ys)), np.nan)
        t = np.full_like(q, np.nan)
        ni = {v: i for i, v in enumerate(ns)}
        hi = {v: i for i, v in enumerate(hs)}
        yi = {v: i for i, v in enumerate(ys)}
        for n, h, y, qv, tv in rows:
            q[ni[n], hi[h], yi[y]] = qv
            t[ni[n], hi[h], yi[y]] = tv
        if np.isnan(q).any():
            raise ValueError(f"{path}: duplicate or missing grid points")
        try:
            return cls(ns, hs, ys, q, t, meta["n_ref_rpm"], meta["h_ref_m"], meta["q_ref_m3s"],
                       meta["t_ref_Nm"], meta.get("specific_speed", 0.0))
        except KeyError as exc:
            raise ValueError(f"{path}: missing header field {exc.args[0]}") from None

    # ------------------------------------------------------------------ synthetic
    @classmethod
    def synthetic_pump_turbine(cls, n_ref: float = 375.0, h_ref: float = 413.64, q_ref: float = 120.0,
                               p_ref_mw: float = 395.0, specific_speed: float = 38.0,
                               turbine: dict | None = None, pump: dict | None = None) -> "MachineCharacteristic":
        """Analytic reversible pump-turbine sampled onto a grid.

        Turbine side, with unit speed ``nu = n / sqrt(h)``::

            phi = y * (q0 - kq * (nu - 1))
            q   = sqrt(h) * phi
            t   = h * (phi * (a - b * nu) - w * nu**2)

        Pump side (``n < 0``, ``N = |n|``, ``g = 0.3 + 0.7 y``)::

            h = alpha * N**2 - beta * (q / g)**2,   t = -q * h * K / (eta * N)

        with ``K = rho g Q_ref H_ref / P_ref``.
        """
        tp = dict(q0=1.0, kq=0.3, a=2.7, b=1.5, w=0.05)
        tp.update(turbine or {})
        pp = dict(alpha=1.583, beta=1.2245, eta=0.9)
        pp.update(pump or {})
        t_ref = p_ref_mw * 1e6 / rpm_to_rad(n_ref)
        K = RHO * G * q_ref * h_ref / (p_ref_mw * 1e6)

        n_turb = np.round(np.arange(0.70, 1.2001, 0.0125), 6)
        n_pump = np.round(np.arange(-1.15, -0.7999, 0.0125), 6)
        n_grid = np.concatenate([n_pump, n_turb])
        h_grid = np.round(np.arange(0.80, 1.2501, 0.05), 6)
        y_grid = np.round(np.arange(0.0, 1.0001, 0.05), 6)
        q = np.zeros((n_grid.size, h_grid.size, y_grid.size))
        t = np.zeros_like(q)
        for i, n in enumerate(n_grid):
            for j, h in enumerate(h_grid):
                for k, y in enumerate(y_grid):
                    if n > 0:
                        nu = n / math.sqrt(h)
                        phi = y * (tp["q0"] - tp["kq"] * (nu - 1.0))
                        q[i, j, k] = math.sqrt(h) * phi
                        t[i, j, k] = h * (phi * (tp["a"] - tp["b"] * nu) - tp["w"] * nu * nu)
                    else:
                        N = -n
                        gy = 0.3 + 0.7 * y
                        excess = pp["alpha"] * N * N - h
                        mag = gy * math.sqrt(abs(excess) / pp["beta"])
                        qq = -mag if excess > 0 else mag
                        q[i, j, k] = qq
                        t[i, j, k] = -qq * h * K / (pp["eta"] * N)
        return cls(n_grid, h_grid, y_grid, q, t, n_ref, h_ref, q_ref, t_ref, specific_speed)


# ---------------------------------------------------------------------- unit

TECHNOLOGIES = ("fixed", "DFIM", "FSFC")


@dataclass
class UnitConfig:
    """Static description of one hydro unit (powers in MW, speeds in rpm, heads in m)."""

    id: str
    rated_power: float
    rated_apparent_power: float
    tau_m: float
    n_synch: float
    n_min: float
    n_middle: float
    n_max: float
    h_min: float
    h_max: float
    turbine_range: tuple[float, float]
    pump_range: tuple[float, float] | None = None
    technology: str = "DFIM"
    spps_extended_range: tuple[float, float] | None = None
    grid_forming_capable: bool = False
    f_n: float = 50.0
    transient_margin: float = 0.02
    stall_fraction: float = 0.5
    converter_lag: float = 0.1
    machine: str = ""
    pump_p_base: float | None = None

    def diagnostics(self) -> list[str]:
        """Invariant violations as readable messages (empty when valid)."""
        out = []
        if self.technology not in TECHNOLOGIES:
            out.append(f"unit {self.id}: technology must be one of {TECHNOLOGIES}, got {self.technology!r}")
        if not self.tau_m > 0:
            out.append(f"unit {self.id}: tau_m must be positive")
        if not self.rated_power > 0:
            out.append(f"unit {self.id}: rated_power must be positive")
        if self.rated_apparent_power < self.rated_power:
            out.append(f"unit {self.id}: rated_apparent_power below rated_power")
        if self.technology == "fixed":
            if not (self.n_min == self.n_middle == self.n_max == self.n_synch):
                out.append(f"unit {self.id}: fixed-speed unit needs n_min = n_middle = n_max = n_synch")
        elif not self.n_min < self.n_middle < self.n_max:
            out.append(f"unit {self.id}: need n_min < n_middle < n_max, got "
                       f"{self.n_min}, {self.n_middle}, {self.n_max}")
        if not self.h_min < self.h_max:
            out.append(f"unit {self.id}: need h_min < h_max")
        lo, hi = self.turbine_range
        if not lo < hi:
            out.append(f"unit {self.id}: turbine range is empty")
        if self.pump_range is not None:
            plo, phi = self.pump_range
            if not (plo < 0 and phi < 0 and plo != phi):
                out.append(f"unit {self.id}: pump range must be two distinct negative powers")
        if self.spps_extended_range is not None:
            elo, ehi = self.spps_extended_range
            if not (elo < ehi and elo <= lo and ehi >= hi):
                out.append(f"unit {self.id}: extended range must contain the normal turbine range")
        if not 0 < self.stall_fraction < 1:
            out.append(f"unit {self.id}: stall_fraction must lie in (0, 1)")
        if not self.converter_lag > 0:
            out.append(f"unit {self.id}: converter_lag must be positive")
        return out

    def __post_init__(self):
        self.turbine_range = tuple(float(v) for v in self.turbine_range)
        if self.pump_range is not None:
            self.pump_range = tuple(float(v) for v in self.pump_range)
        if self.spps_extended_range is not None:
            self.spps_extended_range = tuple(float(v) for v in self.spps_extended_range)
        problems = self.diagnostics()
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def variable_speed(self) -> bool:
        return self.technology != "fixed"

    @property
    def inertia(self) -> float:
        return inertia_from_tau(self.tau_m, self.rated_power, self.n_synch)

    @property
    def omega_n(self) -> float:
        return rpm_to_rad(self.n_synch)

    @property
    def transient_limits(self) -> tuple[float, float]:
        """Admissible transient speed window (rpm)."""
        if self.technology == "FSFC":
            return self.stall_fraction * self.n_synch, self.n_max * (1.0 + self.transient_margin)
        return self.n_min * (1.0 - self.transient_margin), self.n_max * (1.0 + self.transient_margin)

    def power_range(self, mode: str = "turbine", head: float | None = None, spps: bool = False) -> tuple[float, float]:
        """Admissible (low, high) power in MW; turbine limits scale with (H / H_min)^1.5."""
        if mode == "pump":
            if self.pump_range is None:
                raise ValueError(f"unit {self.id} has no pump mode")
            return min(self.pump_range), max(self.pump_range)
        lo, hi = self.spps_extended_range if (spps and self.spps_extended_range) else self.turbine_range
        if head is not None:
            scale = (head / self.h_min) ** 1.5
            lo, hi = lo * scale, hi * scale
        return lo, hi


def inertia_from_tau(tau_m: float, p_rated_mw: float, n_synch: float) -> float:
    """Rotor inertia J (kg m2) from the mechanical time constant ``tau_m = J omega_n^2 / P``."""
    w = rpm_to_rad(n_synch)
    return tau_m * p_rated_mw * 1e6 / (w * w)


def tau_from_inertia(J: float, p_rated_mw: float, n_synch: float) -> float:
    w = rpm_to_rad(n_synch)
    return J * w * w / (p_rated_mw * 1e6)


MODES = ("turbine", "pump", "speed-no-load", "condenser")


@dataclass(frozen=True)
class UnitState:
    n: float
    y: float
    H_net: float
    Q: float
    T_mech: float
    P_elec: float
    mode: str = "turbine"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def P_mech(self) -> float:
        return self.T_mech * rpm_to_rad(self.n) / 1e6


def swing_step(n_rpm: float, T_mech: float, T_elec: float, inertia: float, dt: float) -> float:
    """Advance rotor speed over one step of ``J d(omega)/dt = T_mech - T_elec``.

    Torques are the step averages (trapezoidal mean of start and end values in
    the simulator), so a constant net torque ``dT`` gives exactly
    ``d(omega) = dT * dt / J``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    w0 = rpm_to_rad(n_rpm)
    w1 = w0 + dt * (T_mech - T_elec) / inertia
    return w1 * 30.0 / math.pi


def kinetic_energy(inertia: float, n_rpm: float) -> float:
    w = rpm_to_rad(n_rpm)
    return 0.5 * inertia * w * w


@dataclass
class ElectricalResult:
    P_elec: float
    T_elec: float
    n: float
    strategy_switch: bool = False


def electrical_coupling_step(unit: UnitConfig, *, P_elec: float, P_mech: float, n_rpm: float,
                             f_grid: float, f_grid_prev: float | None = None, P_set: float = 0.0,
                             dt: float) -> ElectricalResult:
    """One electrical update.

    Fixed speed: the rotor follows the grid (``n / n_synch = f / f_n``) and the
    electrical power is the mechanical power minus the rate of change of kinetic
    energy. Variable speed: the converter power approaches ``P_set`` through a
    first-order lag (exact exponential discretisation); the rotor speed is left
    to the swing equation and ``strategy_switch`` flags a speed outside the
    steady window. FSFC units below the stall speed raise :class:`StallError`.
    """
    J = unit.inertia
    if unit.technology == "fixed":
        n1 = unit.n_synch * f_grid / unit.f_n
        n0 = n1 if f_grid_prev is None else unit.n_synch * f_grid_prev / unit.f_n
        w0, w1 = rpm_to_rad(n0), rpm_to_rad(n1)
        dE = 0.5 * J * (w1 * w1 - w0 * w0)
        p = P_mech - dE / dt / 1e6
        return ElectricalResult(p, p * 1e6 / w1, n1)
    if unit.technology == "FSFC" and n_rpm < unit.stall_fraction * unit.n_synch:
        raise StallError(f"unit {unit.id} stalled at {n_rpm:.1f} rpm")
    a = math.exp(-dt / unit.converter_lag)
    p = P_set + (P_elec - P_set) * a
    if abs(p) > unit.rated_apparent_power * (1.0 + 1e-9):
        raise SimulationError(f"unit {unit.id}: converter rating exceeded ({p:.1f} MW)")
    flag = n_rpm < unit.n_min or n_rpm > unit.n_max
    return ElectricalResult(p, p * 1e6 / rpm_to_rad(n_rpm), n_rpm, flag)


# ---------------------------------------------------------------------- battery

@dataclass
class Bess:
    rated_power: float
    energy_capacity: float
    soc: float = 0.5
    response_time_constant: float = 0.05
    power: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.soc <= 1.0:
            raise ValueError("soc must lie in [0, 1]")
        if self.rated_power <= 0 or self.energy_capacity <= 0:
            raise ValueError("rated power and energy capacity must be positive")
        if self.response_time_constant < 0:
            raise ValueError("response time constant must be >= 0")


@dataclass(frozen=True)
class BessStep:
    power: float
    soc: float
    saturated: bool


def bess_step(bess: Bess, P_cmd: float, dt: float) -> BessStep:
    """Lagged, clamped battery response; positive power discharges. Updates ``bess`` in place."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    target = max(-bess.rated_power, min(bess.rated_power, P_cmd))
    saturated = target != P_cmd
    tc = bess.response_time_constant
    p = target if tc == 0 else target + (bess.power - target) * math.exp(-dt / tc)
    e_mwh = bess.energy_capacity
    # energy limits: never step past empty or full
    p_max_dis = bess.soc * e_mwh * 3600.0 / dt
    p_max_chg = (1.0 - bess.soc) * e_mwh * 3600.0 / dt
    if p > p_max_dis:
        p, saturated = p_max_dis, True
    elif -p > p_max_chg:
        p, saturated = -p_max_chg, True
    soc = bess.soc - p * dt / (e_mwh * 3600.0)
    bess.soc = min(1.0, max(0.0, soc))
    bess.power = p
    return BessStep(p, bess.soc, saturated)
