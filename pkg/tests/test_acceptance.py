"""Acceptance suite: one PASS/FAIL line per criterion, each checked at its stated tolerance."""

import dataclasses
import filecmp
import math
import time
from importlib import resources
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hydroflex.campaign import FRADES_STACKS, run_campaign
from hydroflex.config import REFERENCE_PLANT, load_plant
from hydroflex.control import HscUnit, hsc_band, steady_power_target
from hydroflex.envelopes import (
    FcrLimits,
    FfrLimits,
    check_fcr_envelope,
    check_ffr_envelope,
)
from hydroflex.hydraulics import G, build_network, simulate, steady_state
from hydroflex.machine import inertia_from_tau, kinetic_energy
from hydroflex.matrix import parse_matrix, read_score_file, render_matrix
from hydroflex.qualification import (
    TechnologyStack,
    black_start_capacity,
    fcr_capability,
    inertial_power,
    run_afrr_test,
    run_ffr_test,
    synthetic_inertia_test,
)

GOLDEN = Path(__file__).parent / "data" / "services_matrix_golden.csv"
VS = TechnologyStack.parse("VS(DFIM)+SPPS")
FS = TechnologyStack.parse("FS+SPPS")


@pytest.fixture
def say(capsys):
    def emit(criterion, checks):
        ok = all(v for v, _ in checks.values())
        detail = "; ".join(f"{k}: {txt}" for k, (_, txt) in checks.items())
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {criterion} | {detail}")
        return ok
    return emit


@pytest.fixture(scope="module")
def plant():
    return load_plant()


def within(x, ref, rel):
    return abs(x - ref) <= rel * abs(ref)


# ------------------------------------------------------------------ 1

def test_criterion_1_hydraulic_oracles(say):
    t0 = time.perf_counter()
    line = build_network({
        "reservoir": [{"id": "res", "elevation": 100.0}],
        "pipe": [{"id": "p", "length": 1000.0, "diameter": 1.0, "wave_speed": 1000.0, "n_segments": 50}],
        "valve": [{"id": "v", "discharge_area": 0.05, "outlet_head": 0.0}],
        "junction": [{"id": "j1", "ports": ["res", "p.in"]}, {"id": "j2", "ports": ["p.out", "v.in"]}],
    })
    s0 = steady_state(line)
    dv = s0.branch_flows[0] / (math.pi / 4)
    tr = np.array(simulate(line, s0, 0.01, 2.0, valve_openings={"v": lambda t: 0.0},
                           record=lambda s: (s.t, s.head("j2"))))
    plateau = tr[(tr[:, 0] > 0.05) & (tr[:, 0] < 1.95), 1].mean() - s0.head("j2")
    jouk = 1000.0 * dv / G

    tank = build_network({
        "reservoir": [{"id": "res", "elevation": 100.0}],
        "pipe": [{"id": "p", "length": 1000.0, "diameter": 2.0, "wave_speed": 1000.0, "n_segments": 5}],
        "surge_tank": [{"id": "st", "cross_section": 20.0, "base_elevation": 50.0, "max_level": 200.0}],
        "valve": [{"id": "v", "discharge_area": 0.1, "outlet_head": 0.0}],
        "junction": [{"id": "j1", "ports": ["res", "p.in"]}, {"id": "j2", "ports": ["p.out", "st", "v.in"]}],
    })
    s1 = steady_state(tank)
    rec = np.array(simulate(tank, s1, 0.01, 400.0, valve_openings={"v": lambda t: max(0.0, 1.0 - t)},
                            record=lambda s: (s.t, s.tank_level("st"),
                                              max(abs(x) for x in s.junction_imbalance().values()))))
    z = rec[:, 1] - 100.0
    i = np.flatnonzero((z[:-1] < 0) & (z[1:] >= 0))
    cross = rec[i, 0] - z[i] * 0.01 / (z[i + 1] - z[i])
    period = float(np.mean(np.diff(cross)))
    oracle = 2 * math.pi * math.sqrt(1000.0 * 20.0 / (G * math.pi))
    imb = float(rec[:, 2].max())
    dt = time.perf_counter() - t0
    checks = {
        "Joukowsky": (within(plateau, jouk, 0.02), f"{plateau:.2f} m vs {jouk:.2f} m"),
        "surge tank period": (within(period, oracle, 0.03), f"{period:.2f} s vs {oracle:.2f} s"),
        "continuity": (imb < 1e-6, f"{imb:.1e} m3/s"),
        "runtime": (dt < 60.0, f"{dt:.1f} s"),
    }
    assert say(1, checks)


# ------------------------------------------------------------------ 2

def test_criterion_2_inertia(say, plant):
    p = inertial_power(7.9, 395.0, -1.0, 50.0)
    # independent oracle: rotor kinetic energy released over a short slice of the 1 Hz/s ramp
    J = inertia_from_tau(7.9, 395.0, 375.0)
    h = 1e-6
    oracle = (kinetic_energy(J, 375.0) - kinetic_energy(J, 375.0 * (50.0 - h) / 50.0)) / h / 1e6
    sim = synthetic_inertia_test(plant, VS)
    checks = {
        "analytic": (within(p, 62.4, 0.001), f"{p:.3f} MW vs 62.4 MW"),
        "swing oracle": (within(p, oracle, 0.001), f"oracle {oracle:.3f} MW"),
        "simulated VS peak": (sim.passed and within(sim.details["peak"], p, 0.10), f"{sim.details['peak']:.2f} MW"),
    }
    assert say(2, checks)


# ------------------------------------------------------------------ 3

def test_criterion_3_fcr_arithmetic(say):
    turb = steady_power_target(-0.2, 0.0085, 395.0)
    pump = steady_power_target(-0.2, 0.035, 393.75)
    # published values: turbine 186.4 MW around mid-range, pump +-45 MW
    units = [HscUnit("t", "turbine", 186.4, 0.0, 372.8), HscUnit("p", "pump", -345.0, -390.0, -300.0)]
    hsc = hsc_band(units)
    checks = {
        "turbine": (round(turb, 1) == 185.9 and within(turb, 186.4, 0.01), f"{turb:.2f} MW"),
        "pump": (pump == 45.0 and units[1].headroom(1) == units[1].headroom(-1) == 45.0, f"+-{pump:.2f} MW"),
        "HSC sum": (hsc == 231.4, f"{hsc:.1f} MW"),
    }
    assert say(3, checks)


# ------------------------------------------------------------------ 4

def test_criterion_4_reference_plant(say, plant):
    t0 = time.perf_counter()
    fcr = fcr_capability(plant, VS, "turbine")
    ffr_mid = run_ffr_test(plant, VS, "n_middle")
    ffr_max = run_ffr_test(plant, VS, "n_max")
    bs_mid = black_start_capacity(plant, VS, "n_middle")
    bs_max = black_start_capacity(plant, VS, "n_max")
    bs_fs = black_start_capacity(plant, FS)
    dt = time.perf_counter() - t0
    ratio = max(bs_mid.capability, bs_max.capability) / bs_fs.capability if bs_fs.capability else math.inf
    checks = {
        "FCR": (fcr.passed and within(fcr.capability, 186.4, 0.05), f"{fcr.capability:.1f} MW"),
        "FFR n_middle": (within(ffr_mid.capability, 80.0, 0.10), f"{ffr_mid.capability:.1f} MW"),
        "FFR n_max": (within(ffr_max.capability, 110.0, 0.10), f"{ffr_max.capability:.1f} MW"),
        "black start n_middle": (within(bs_mid.capability, 113.0, 0.10), f"{bs_mid.capability:.1f} MW"),
        "black start n_max": (within(bs_max.capability, 124.0, 0.10), f"{bs_max.capability:.1f} MW"),
        "VS/FS black start": (ratio >= 2.0, f"{ratio:.2f} (FS {bs_fs.capability:.1f} MW)"),
        "runtime": (dt < 300.0, f"{dt:.0f} s"),
    }
    assert say(4, checks)


# ------------------------------------------------------------------ 5

def test_criterion_5_envelope_fail_cases(say):
    t = np.arange(0.0, 150.0, 0.05)
    ramp = lambda delay, t_full, level: 100.0 * level * np.clip((t - delay) / (t_full - delay), 0, 1)
    late = check_fcr_envelope(t, ramp(2.5 - 0.5, 12.0, 1.0), 100.0)
    short = check_fcr_envelope(t, ramp(0.2, 10.0, 0.95), 100.0)
    tf = np.arange(0.0, 60.0, 0.01)
    ffr = lambda t_full, level: np.where(tf <= t_full + 35, 80.0 * level * np.clip(tf / t_full, 0, 1), 0.0)
    slow = check_ffr_envelope(tf, ffr(1.5 / 0.9, 1.0), 80.0, FfrLimits())
    over = check_ffr_envelope(tf, ffr(1.0, 1.25), 80.0, FfrLimits())
    names = lambda r: [v.quantity for v in r.violations]
    checks = {
        "t_i 2.5 s": (names(late) == ["t_i"], f"{names(late)} at t_i={late.details['t_i']:.2f} s"),
        "t_r at 95%": (names(short) == ["t_r"], str(names(short))),
        "FFR 1.5 s": (names(slow) == ["full_activation"], str(names(slow))),
        "over-delivery 25%": (names(over) == ["over_delivery"], str(names(over))),
    }
    assert say("5a", checks)


T_MONO = np.arange(0.0, 150.0, 0.1)


@settings(max_examples=1000, deadline=None)
@given(st.floats(0.0, 4.0), st.floats(1.0, 40.0), st.floats(0.85, 1.1), st.floats(0.02, 0.2), st.floats(1.0, 5.0),
       st.floats(10.0, 40.0), st.floats(0.3, 1.0), st.floats(0.3, 1.0), st.floats(0.3, 1.0))
def _monotone_under_tightening(delay, rise, level, e_v, t_i, t_r, k1, k2, k3):
    dP = 50.0 * level * np.clip((T_MONO - delay) / rise, 0, 1)
    loose = FcrLimits(e_v=e_v, t_i_max=t_i, t_r_max=t_r)
    tight = dataclasses.replace(loose, e_v=e_v * k1, t_i_max=t_i * k2, t_r_max=max(t_i, t_r * k3) + 1e-6)
    a, b = check_fcr_envelope(T_MONO, dP, 50.0, loose), check_fcr_envelope(T_MONO, dP, 50.0, tight)
    assert {v.quantity for v in a.violations} <= {v.quantity for v in b.violations}
    assert b.passed <= a.passed


def test_criterion_5_monotonicity(say):
    try:
        _monotone_under_tightening()
        ok, txt = True, "1000 randomized trace/limit tightenings, no violation lost"
    except AssertionError as exc:
        ok, txt = False, f"counterexample: {exc}"
    assert say("5b", {"monotonicity": (ok, txt)})


# ------------------------------------------------------------------ 6

def test_criterion_6_afrr_tracking(say, plant):
    vs = run_afrr_test(plant, TechnologyStack.parse("VS(DFIM)"), "turbine", 1)
    spps = run_afrr_test(plant, VS, "turbine", 1)
    checks = {
        "VS": (vs.passed and vs.details["covered_until"] >= 400.0 - 1e-6,
               f"PR {vs.capability:.1f} MW, max error {vs.details['max_abs_error']:.2f} MW"),
        "VS+SPPS": (spps.passed, f"PR {spps.capability:.1f} MW, max error {spps.details['max_abs_error']:.2f} MW"),
    }
    assert say(6, checks)


# ------------------------------------------------------------------ 7

def test_criterion_7_matrix_golden(say):
    m = read_score_file(resources.files("hydroflex") / "data" / "services_matrix_scores.csv")
    csv_text = render_matrix(m, "csv")
    js = render_matrix(m, "json")
    back = parse_matrix(js)
    checks = {
        "golden CSV": (csv_text == GOLDEN.read_text(), f"{len(m.rows)} rows"),
        "HSC + n/a cells": ("5.0 + 1.2" in csv_text and "n/a" in csv_text, "present"),
        "JSON round trip": (back == m and render_matrix(back, "json") == js, "exact"),
    }
    assert say(7, checks)


# ------------------------------------------------------------------ 8

def _tree(root: Path) -> list[str]:
    return sorted(str(p.relative_to(root)) for p in root.rglob("*") if p.is_file())


def test_criterion_8_determinism(say, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    t0 = time.perf_counter()
    ra = run_campaign(REFERENCE_PLANT, FRADES_STACKS, out=a)
    run_campaign(REFERENCE_PLANT, FRADES_STACKS, out=b)
    elapsed = time.perf_counter() - t0
    files = _tree(a)
    same_tree = files == _tree(b)
    mismatch = [f for f in files if not filecmp.cmp(a / f, b / f, shallow=False)] if same_tree else files
    n_reports = sum(1 for f in files if f.startswith("reports") and f.endswith(".json"))
    checks = {
        "byte-identical": (same_tree and not mismatch, f"{len(files)} files, {len(mismatch)} differ"),
        "battery size": (n_reports >= 30, f"{n_reports} reports over {len(FRADES_STACKS)} stacks"),
        "no failed cells": (ra.exit_code == 0, f"exit {ra.exit_code}, {elapsed:.0f} s for two runs"),
    }
    assert say(8, checks)
