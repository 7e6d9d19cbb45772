"""Grid-code envelope checks for FCR, aFRR and FFR responses.

Every checker takes a sampled response, compares it with the envelope and
returns a :class:`ComplianceReport` listing each violation.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .control import FFR_ALTERNATIVES, SUPPORT_DURATIONS, AfrrController, afrr_filtered_setpoint


@dataclass(frozen=True)
class Violation:
    time: float
    quantity: str
    value: float
    bound: float


@dataclass
class ComplianceReport:
    service: str
    passed: bool
    capability: float
    violations: list[Violation] = field(default_factory=list)
    timeseries: str | None = None
    details: dict = field(default_factory=dict)
    # simulation result behind the report; not serialised
    trace: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.passed != (not self.violations):
            raise ValueError("a report passes exactly when it has no violations")

    @classmethod
    def from_violations(cls, service: str, capability: float, violations: list[Violation], **kw) -> "ComplianceReport":
        return cls(service, not violations, capability, list(violations), **kw)

    def to_dict(self) -> dict:
        return {
            "service": self.service,
            "pass": self.passed,
            "capability_mw": self.capability,
            "violations": [asdict(v) for v in self.violations],
            "timeseries": self.timeseries,
            "details": self.details,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ComplianceReport":
        return cls(d["service"], d["pass"], d["capability_mw"], [Violation(**v) for v in d["violations"]],
                   d.get("timeseries"), d.get("details", {}))


def _arrays(t: Sequence[float], p: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(t, dtype=float)
    p = np.asarray(p, dtype=float)
    if t.ndim != 1 or t.shape != p.shape or t.size < 2:
        raise ValueError("time and power traces must be 1-D arrays of equal length >= 2")
    if np.any(np.diff(t) <= 0):
        raise ValueError("time must be strictly increasing")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(p))):
        raise ValueError("traces must be finite")
    return t, p


def _first(mask: np.ndarray) -> int | None:
    idx = np.flatnonzero(mask)
    return int(idx[0]) if idx.size else None


# ---------------------------------------------------------------------- FCR

@dataclass(frozen=True)
class FcrLimits:
    """FCR step-response envelope.

    ``detect_threshold`` (fraction of Rp) defines the first-response time
    ``t_i``; ``reach_tol`` defines when Rp counts as reached for ``t_r``; the
    response must then stay within ``e_v * Rp`` of Rp for ``hold`` seconds.
    """

    e_v: float = 0.05
    t_i_max: float = 2.0
    t_r_max: float = 30.0
    hold: float = 120.0
    detect_threshold: float = 0.05
    reach_tol: float = 0.01

    def __post_init__(self):
        if not 0 < self.e_v < 1:
            raise ValueError("e_v must lie in (0, 1)")
        if not 0 < self.t_i_max < self.t_r_max:
            raise ValueError("need 0 < t_i_max < t_r_max")
        if self.hold <= 0:
            raise ValueError("hold duration must be positive")


def check_fcr_envelope(t: Sequence[float], dP: Sequence[float], Rp: float, limits: FcrLimits = FcrLimits()) -> ComplianceReport:
    """Check a power deviation trace (activation at ``t[0]``) against the FCR envelope.

    ``Rp`` is signed: negative for an over-frequency step.
    """
    t, p = _arrays(t, dP)
    if t[-1] - t[0] < limits.hold:
        raise ValueError(f"trace covers {t[-1] - t[0]:.1f} s, shorter than the {limits.hold} s hold window")
    if Rp == 0:
        raise ValueError("Rp must be non-zero")
    R = abs(Rp)
    s = p * math.copysign(1.0, Rp)
    tt = t - t[0]
    v: list[Violation] = []
    i = _first(s > limits.detect_threshold * R)
    t_i = tt[i] if i is not None else math.inf
    if t_i > limits.t_i_max:
        t_seen = min(t_i, float(tt[-1]))
        v.append(Violation(t_seen, "t_i", t_seen, limits.t_i_max))
    r = _first(s >= (1.0 - limits.reach_tol) * R)
    t_r = tt[r] if r is not None else math.inf
    if t_r > limits.t_r_max:
        v.append(Violation(limits.t_r_max, "t_r", float(np.max(s) / R), 1.0 - limits.reach_tol))
    if r is not None:
        win = (tt >= t_r) & (tt <= t_r + limits.hold)
        bad = win & (np.abs(s - R) > limits.e_v * R)
        k = _first(bad)
        if k is not None:
            worst = int(np.argmax(np.where(bad, np.abs(s - R), -1.0)))
            v.append(Violation(float(tt[k]), "hold_band", float(p[worst]), limits.e_v * R))
    sustained = float(np.mean(s[tt >= tt[-1] - 0.1 * (tt[-1] - tt[0])]))
    return ComplianceReport.from_violations("FCR", sustained if not v else 0.0, v,
                                            details={"t_i": _finite(t_i), "t_r": _finite(t_r), "Rp": Rp})


def _finite(x: float) -> float | None:
    return float(x) if math.isfinite(x) else None


# ---------------------------------------------------------------------- aFRR

@dataclass(frozen=True)
class AfrrLimits:
    ev: float = 0.05
    T_b: float = 30.0
    T_i_max: float = 2.0
    T: float = 400.0
    filter_tau: float = 20.0
    ramp_duration: float = 300.0

    def __post_init__(self):
        if not 0 < self.ev < 1:
            raise ValueError("ev must lie in (0, 1)")
        if not self.T > self.ramp_duration:
            raise ValueError("T must exceed the ramp duration")
        if self.filter_tau <= 0:
            raise ValueError("filter constant must be positive")


def check_afrr_envelope(t: Sequence[float], P: Sequence[float], raw_setpoint: Sequence[float], PR: float,
                        limits: AfrrLimits = AfrrLimits()) -> ComplianceReport:
    """Output power must stay within the filtered setpoint +- ev PR from T_i through T.

    ``t[0]`` is the start of the setpoint ramp; samples must be uniform.
    """
    t, p = _arrays(t, P)
    raw = np.asarray(raw_setpoint, dtype=float)
    if raw.shape != t.shape:
        raise ValueError("setpoint trace must match the time axis")
    if not PR > 0:
        raise ValueError("PR must be positive")
    dt = float(t[1] - t[0])
    if not np.allclose(np.diff(t), dt, rtol=1e-6, atol=1e-9):
        raise ValueError("aFRR traces must be uniformly sampled")
    centre = afrr_filtered_setpoint(AfrrController(PR, limits.filter_tau, limits.ramp_duration), raw, dt)
    tt = t - t[0]
    band = limits.ev * PR
    win = (tt >= limits.T_i_max) & (tt <= limits.T + 1e-9)
    err = p - centre
    bad = win & (np.abs(err) > band)
    v: list[Violation] = []
    # one violation per contiguous excursion
    idx = np.flatnonzero(bad)
    if idx.size:
        starts = idx[np.concatenate([[True], np.diff(idx) > 1])]
        for k in starts:
            v.append(Violation(float(tt[k]), "band", float(p[k]),
                               float(centre[k] + math.copysign(band, err[k]))))
    details = {"max_abs_error": float(np.max(np.abs(err[win]))) if win.any() else 0.0, "PR": PR,
               "covered_until": float(tt[-1])}
    if tt[-1] < limits.T - 1e-9:
        v.append(Violation(float(tt[-1]), "duration", float(tt[-1]), limits.T))
    return ComplianceReport.from_violations("aFRR", PR if not v else 0.0, v, details=details)


# ---------------------------------------------------------------------- FFR

@dataclass(frozen=True)
class FfrLimits:
    """FFR envelope; full activation counts once the response reaches
    ``(1 - full_activation_tolerance) * capacity``."""

    activation_level: float = 49.7
    full_activation_max: float | None = None
    support_min: float = 30.0
    over_delivery_max: float = 0.20
    cycle_max: float = 900.0
    full_activation_tolerance: float = 0.10

    def __post_init__(self):
        if self.full_activation_max is None:
            if self.activation_level not in FFR_ALTERNATIVES:
                raise ValueError(f"activation level must be one of {sorted(FFR_ALTERNATIVES)} "
                                 "unless full_activation_max is given")
            object.__setattr__(self, "full_activation_max", FFR_ALTERNATIVES[self.activation_level])
        if self.support_min <= 0 or self.over_delivery_max < 0 or self.cycle_max <= 0:
            raise ValueError("FFR limits must be positive")
        if not 0 <= self.full_activation_tolerance < 1:
            raise ValueError("full activation tolerance must lie in [0, 1)")

    @classmethod
    def for_support(cls, support: str, **kw) -> "FfrLimits":
        return cls(support_min=SUPPORT_DURATIONS[support], **kw)


def check_ffr_envelope(t: Sequence[float], dP: Sequence[float], capacity: float,
                       limits: FfrLimits = FfrLimits()) -> ComplianceReport:
    """Check an FFR power deviation trace with the activation instant at ``t[0]``."""
    t, p = _arrays(t, dP)
    if not capacity > 0:
        raise ValueError("capacity must be positive")
    tt = t - t[0]
    C = capacity
    full = (1.0 - limits.full_activation_tolerance) * C
    v: list[Violation] = []
    i = _first(p >= full)
    t_full = tt[i] if i is not None else math.inf
    if t_full > limits.full_activation_max:
        v.append(Violation(float(min(t_full, tt[-1])), "full_activation", float(t_full) if i is not None else float(np.max(p)),
                           limits.full_activation_max))
    if i is not None:
        end = t_full + limits.support_min
        if tt[-1] < end - 1e-9:
            v.append(Violation(float(tt[-1]), "support", float(tt[-1] - t_full), limits.support_min))
        else:
            win = (tt >= t_full) & (tt <= end + 1e-9)
            k = _first(win & (p < full))
            if k is not None:
                v.append(Violation(float(tt[k]), "support", float(tt[k] - t_full), limits.support_min))
    peak = float(np.max(p))
    if peak > (1.0 + limits.over_delivery_max) * C:
        v.append(Violation(float(tt[int(np.argmax(p))]), "over_delivery", peak / C, 1.0 + limits.over_delivery_max))
    if tt[-1] >= limits.cycle_max and i is not None:
        after = (tt > t_full + limits.support_min) & (np.abs(p) <= limits.full_activation_tolerance * C)
        k = _first(after)
        if k is None or tt[k] >= limits.cycle_max:
            v.append(Violation(limits.cycle_max, "cycle", float(tt[k]) if k is not None else float(tt[-1]), limits.cycle_max))
    return ComplianceReport.from_violations("FFR", capacity if not v else 0.0, v,
                                            details={"t_full": _finite(t_full), "peak_ratio": peak / C})
