import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hydroflex.control import AfrrController, afrr_filtered_setpoint, afrr_raw_setpoint
from hydroflex.envelopes import (
    AfrrLimits,
    ComplianceReport,
    FcrLimits,
    FfrLimits,
    Violation,
    check_afrr_envelope,
    check_fcr_envelope,
    check_ffr_envelope,
)

DT = 0.05
T_FCR = np.arange(0.0, 150.0 + DT / 2, DT)
T_FFR = np.arange(0.0, 60.0 + DT / 2, DT)


def fcr_trace(rp, delay=0.2, t_full=10.0, level=1.0, t=T_FCR):
    """Dead time, then a linear ramp to ``level * rp`` reached at ``t_full``."""
    frac = np.clip((t - delay) / (t_full - delay), 0.0, 1.0)
    return rp * level * frac


def ffr_trace(c, t_full=1.0, level=1.0, hold=35.0, t=T_FFR):
    up = np.clip(t / t_full, 0.0, 1.0) * c * level
    return np.where(t <= t_full + hold, up, 0.0)


def test_fcr_clean_step_passes():
    r = check_fcr_envelope(T_FCR, fcr_trace(186.4), 186.4)
    assert r.passed and r.violations == []
    assert r.capability == pytest.approx(186.4)
    assert r.details["t_r"] == pytest.approx(0.2 + 0.99 * 9.8, abs=DT)


def test_fcr_over_frequency_sign():
    r = check_fcr_envelope(T_FCR, fcr_trace(-100.0), -100.0)
    assert r.passed and r.capability == pytest.approx(100.0)


def test_fcr_slow_first_response_is_one_violation():
    # first visible response at 2.5 s against the 2 s limit
    dP = fcr_trace(186.4, delay=2.5 - 0.05 * 9.8 / 0.95, t_full=12.0)
    r = check_fcr_envelope(T_FCR, dP, 186.4)
    assert [v.quantity for v in r.violations] == ["t_i"]
    assert r.details["t_i"] == pytest.approx(2.5, abs=0.06)


def test_fcr_reaching_only_95_percent_is_one_violation():
    r = check_fcr_envelope(T_FCR, fcr_trace(186.4, level=0.95), 186.4)
    assert [v.quantity for v in r.violations] == ["t_r"]
    assert r.violations[0].value == pytest.approx(0.95)
    assert not r.passed and r.capability == 0.0


def test_fcr_hold_band_breach():
    dP = fcr_trace(100.0)
    dP[T_FCR > 60] *= 0.9
    r = check_fcr_envelope(T_FCR, dP, 100.0)
    assert [v.quantity for v in r.violations] == ["hold_band"]


def test_fcr_inverse_dip_does_not_count_as_response():
    dP = fcr_trace(100.0, delay=3.0, t_full=12.0)
    dP[(T_FCR > 0) & (T_FCR < 1.0)] = -20.0
    r = check_fcr_envelope(T_FCR, dP, 100.0)
    assert "t_i" in {v.quantity for v in r.violations}


def test_fcr_rejects_short_trace():
    with pytest.raises(ValueError):
        check_fcr_envelope(T_FCR[:100], fcr_trace(1.0)[:100], 1.0)


def test_ffr_clean_pass():
    r = check_ffr_envelope(T_FFR, ffr_trace(80.0), 80.0)
    assert r.passed and r.capability == 80.0


def test_ffr_late_full_activation_is_one_violation():
    r = check_ffr_envelope(T_FFR, ffr_trace(80.0, t_full=1.5 / 0.9), 80.0)
    assert [v.quantity for v in r.violations] == ["full_activation"]


def test_ffr_over_delivery_is_one_violation():
    r = check_ffr_envelope(T_FFR, ffr_trace(80.0, level=1.25), 80.0)
    assert [v.quantity for v in r.violations] == ["over_delivery"]
    assert r.violations[0].value == pytest.approx(1.25)


def test_ffr_support_too_short():
    r = check_ffr_envelope(T_FFR, ffr_trace(80.0, hold=10.0), 80.0, FfrLimits.for_support("long"))
    assert [v.quantity for v in r.violations] == ["support"]
    assert check_ffr_envelope(T_FFR, ffr_trace(80.0, hold=10.0), 80.0, FfrLimits.for_support("short")).passed


def test_ffr_cycle_requires_return_to_zero():
    t = np.arange(0.0, 1000.0, 0.5)
    stuck = np.where(t < 1.0, 80.0 * t, 80.0)
    r = check_ffr_envelope(t, stuck, 80.0)
    assert "cycle" in {v.quantity for v in r.violations}
    assert check_ffr_envelope(t, ffr_trace(80.0, t=t), 80.0).passed


def afrr_case(offset=0.0, dt=0.1, T=400.0):
    ctrl = AfrrController(93.2)
    t = np.arange(0.0, T + dt / 2, dt)
    raw = afrr_raw_setpoint(t, 186.4, ctrl)
    return t, afrr_filtered_setpoint(ctrl, raw, dt) + offset, raw


def test_afrr_tracking_passes():
    t, p, raw = afrr_case()
    r = check_afrr_envelope(t, p, raw, 93.2)
    assert r.passed and r.capability == 93.2


def test_afrr_excursions_counted_once_each():
    t, p, raw = afrr_case()
    p = p.copy()
    p[(t > 50) & (t < 60)] += 10.0
    p[(t > 100) & (t < 110)] -= 10.0
    r = check_afrr_envelope(t, p, raw, 93.2)
    assert [v.quantity for v in r.violations] == ["band", "band"]


def test_afrr_short_trace_flags_duration():
    t, p, raw = afrr_case(T=350.0)
    r = check_afrr_envelope(t, p, raw, 93.2)
    assert [v.quantity for v in r.violations] == ["duration"]


def test_report_invariants_and_roundtrip():
    with pytest.raises(ValueError):
        ComplianceReport("FCR", True, 1.0, [Violation(0.0, "t_i", 3.0, 2.0)])
    r = ComplianceReport.from_violations("FCR", 0.0, [Violation(0.0, "t_i", 3.0, 2.0)], details={"a": 1})
    assert ComplianceReport.from_dict(r.to_dict()) == r


def test_limit_validation():
    with pytest.raises(ValueError):
        FcrLimits(e_v=0.0)
    with pytest.raises(ValueError):
        FcrLimits(t_i_max=40.0)
    with pytest.raises(ValueError):
        FfrLimits(activation_level=49.8)
    with pytest.raises(ValueError):
        AfrrLimits(T=200.0)


# ---------------------------------------------------------------- monotonicity

def _quantities(r):
    return {v.quantity for v in r.violations}


@st.composite
def fcr_cases(draw):
    rp = draw(st.sampled_from([-1.0, 1.0])) * draw(st.floats(10.0, 200.0))
    delay = draw(st.floats(0.0, 4.0))
    t_full = delay + draw(st.floats(1.0, 40.0))
    level = draw(st.floats(0.85, 1.1))
    sag = draw(st.floats(0.0, 0.1))
    dP = fcr_trace(rp, delay, t_full, level)
    dP = dP * np.where(T_FCR > t_full + 20.0, 1.0 - sag, 1.0)
    loose = FcrLimits(e_v=draw(st.floats(0.02, 0.2)), t_i_max=draw(st.floats(1.0, 5.0)),
                      t_r_max=draw(st.floats(10.0, 40.0)), hold=120.0)
    tight = dataclasses.replace(loose, e_v=loose.e_v * draw(st.floats(0.3, 1.0)),
                                t_i_max=loose.t_i_max * draw(st.floats(0.3, 1.0)),
                                t_r_max=max(loose.t_i_max, loose.t_r_max * draw(st.floats(0.3, 1.0))) + 1e-6)
    return dP, rp, loose, tight


@settings(max_examples=1000, deadline=None)
@given(fcr_cases())
def test_fcr_tightening_never_removes_violations(case):
    dP, rp, loose, tight = case
    a = check_fcr_envelope(T_FCR, dP, rp, loose)
    b = check_fcr_envelope(T_FCR, dP, rp, tight)
    assert _quantities(a) <= _quantities(b)
    assert b.passed <= a.passed


@st.composite
def ffr_cases(draw):
    c = draw(st.floats(10.0, 200.0))
    dP = ffr_trace(c, draw(st.floats(0.2, 3.0)), draw(st.floats(0.8, 1.4)), draw(st.floats(1.0, 50.0)))
    loose = FfrLimits(full_activation_max=draw(st.floats(0.5, 2.0)), support_min=draw(st.floats(2.0, 30.0)),
                      over_delivery_max=draw(st.floats(0.05, 0.4)))
    tight = dataclasses.replace(loose, full_activation_max=loose.full_activation_max * draw(st.floats(0.3, 1.0)),
                                support_min=loose.support_min * draw(st.floats(1.0, 2.0)),
                                over_delivery_max=loose.over_delivery_max * draw(st.floats(0.0, 1.0)))
    return dP, c, loose, tight


@settings(max_examples=1000, deadline=None)
@given(ffr_cases())
def test_ffr_tightening_never_removes_violations(case):
    dP, c, loose, tight = case
    a = check_ffr_envelope(T_FFR, dP, c, loose)
    b = check_ffr_envelope(T_FFR, dP, c, tight)
    assert _quantities(a) <= _quantities(b)
    assert b.passed <= a.passed
