import dataclasses

import numpy as np
import pytest

from hydroflex.config import load_plant
from hydroflex.control import HbhJointControl
from hydroflex.machine import Bess
from hydroflex.plant import Plant, UnitSpec
from hydroflex.qualification import (
    TechnologyStack,
    afrr_band,
    bisect_capacity,
    black_start_capacity,
    configure,
    fcr_band,
    hbh_fcr_comparison,
    inertia_frequency,
    inertial_power,
    run_afrr_test,
    run_fcr_test,
    run_ffr_test,
    synthetic_inertia_test,
    voltvar_capability,
    voltvar_report,
)

VS = TechnologyStack.parse("VS(DFIM)+SPPS")
FS = TechnologyStack.parse("FS+SPPS")


@pytest.fixture(scope="module")
def plant():
    return load_plant()


@pytest.mark.parametrize("text,label", [
    ("FS", "FS"),
    ("VS", "VS(DFIM)"),
    ("VS (DFIM) & SPSS & HSC", "VS(DFIM)+SPPS+HSC"),
    ("FS, SPSS & HSC", "FS+SPPS+HSC"),
    ("VS (FSFC) & SPSS", "VS(FSFC)+SPPS"),
    ("FS Kaplan", "FS"),
    ("VS(DFIM)+SPPS+HBH", "VS(DFIM)+SPPS+HBH"),
])
def test_stack_parse(text, label):
    s = TechnologyStack.parse(text)
    assert s.label == label
    assert TechnologyStack.parse(s.label) == s


@pytest.mark.parametrize("text", ["", "XS", "FS(DFIM)", "VS+TURBO"])
def test_stack_parse_rejects(text):
    with pytest.raises(ValueError):
        TechnologyStack.parse(text)


def test_configure_fixed_speed(plant):
    cfg = configure(plant, FS).units[0].config
    assert cfg.technology == "fixed" and cfg.n_min == cfg.n_max == cfg.n_synch


def test_bisect_capacity_finds_threshold():
    assert bisect_capacity(lambda x: x <= 42.0, 100.0, 0.01) == pytest.approx(42.0, abs=0.01)
    assert bisect_capacity(lambda x: True, 100.0, 0.01) == 100.0
    assert bisect_capacity(lambda x: False, 100.0, 0.01) < 0.01
    with pytest.raises(ValueError):
        bisect_capacity(lambda x: True, 1.0, 0.0)


def test_inertial_power_oracle():
    # independent route: kinetic energy change over one second of a 1 Hz/s ramp
    tau, p, f = 7.9, 395.0, 50.0
    e0 = 0.5 * tau * p
    e1 = e0 * ((f - 1e-6) / f) ** 2
    oracle = (e0 - e1) / 1e-6
    assert inertial_power(tau, p, -1.0, f) == pytest.approx(oracle, rel=1e-4)
    assert inertial_power(tau, p, -1.0, f) == pytest.approx(62.4, rel=1e-3)
    with pytest.raises(ValueError):
        inertial_power(float("nan"), p, -1.0)


def test_inertia_frequency_profile():
    assert inertia_frequency(0.5) == 50.0
    assert inertia_frequency(1.5) == pytest.approx(49.5)
    assert inertia_frequency(5.0) == pytest.approx(49.0)


def test_fcr_band_arithmetic(plant):
    p0, rp = fcr_band(plant, VS, "turbine")
    assert rp == pytest.approx(185.88, abs=0.01)
    assert p0 == pytest.approx(186.4)
    _, rp_pump = fcr_band(plant, VS, "pump")
    assert rp_pump == pytest.approx(45.0, abs=1e-9)


def test_afrr_bands(plant):
    assert afrr_band(plant, VS, "turbine") == pytest.approx(186.4)
    assert afrr_band(plant, TechnologyStack.parse("VS"), "turbine") == pytest.approx(93.2)
    assert afrr_band(plant, FS, "pump") == 0.0


def test_voltvar(plant):
    assert voltvar_capability(420.0, 395.0) == pytest.approx(142.7, abs=0.05)
    assert voltvar_report(plant, VS).capability == pytest.approx(128.1, abs=0.05)
    assert voltvar_report(plant, FS).capability == pytest.approx(142.7, abs=0.05)
    with pytest.raises(ValueError):
        voltvar_capability(100.0, 200.0)


def test_synthetic_inertia_matches_synchronous_value(plant):
    r = synthetic_inertia_test(plant, VS)
    assert r.passed and r.service == "synth-inertia"
    assert r.capability == pytest.approx(62.41, rel=0.10)


def test_fixed_speed_inertia_is_synchronous(plant):
    r = synthetic_inertia_test(plant, FS)
    assert r.passed and r.service == "sync-inertia"
    assert r.capability == pytest.approx(62.41, rel=0.10)


def test_inertia_emulation_disabled_fails(plant):
    r = synthetic_inertia_test(plant, VS, emulation_gain=0.0)
    assert not r.passed and [v.quantity for v in r.violations] == ["peak_power"]


def test_slow_rocof_estimate_fails(plant):
    assert not synthetic_inertia_test(plant, VS, window=1.0).passed


def test_fcr_pump_band(plant):
    r = run_fcr_test(plant, VS, -1, "pump")
    assert r.passed and r.capability == pytest.approx(45.0, rel=0.01)


def test_fcr_deadband_swallowing_step_fails(plant):
    r = run_fcr_test(plant, VS, -1, "turbine", reserve=50.0, deadband=0.3)
    assert not r.passed


def test_afrr_infeasible_band_raises(plant):
    with pytest.raises(ValueError):
        run_afrr_test(plant, TechnologyStack.parse("VS"), reserve=150.0)


def test_ffr_needs_variable_speed(plant):
    r = run_ffr_test(plant, FS, capacity=50.0)
    assert not r.passed and r.violations[0].quantity == "technology"


def test_black_start_needs_grid_forming(plant):
    units = [UnitSpec(dataclasses.replace(u.config, grid_forming_capable=False), u.characteristic, u.machine_node)
             for u in plant.units]
    p = Plant(plant.name, plant.network_config, units, plant.controls, plant.f_n, plant.dt, plant.extras)
    r = black_start_capacity(p, VS)
    assert not r.passed and r.violations[0].quantity == "grid_forming"


def test_hbh_reduces_turbine_travel():
    rng = np.random.default_rng(1)
    dt = 0.5
    df = np.cumsum(rng.normal(0, 0.004, 2400))
    df = np.clip(df - np.convolve(df, np.ones(120) / 120, mode="same"), -0.2, 0.2)
    out = hbh_fcr_comparison(df, dt, 0.0085, 395.0, Bess(20.0, 10.0), HbhJointControl())
    assert out.wear_ratio < 1.0
    assert 0.0 <= out.final_soc <= 1.0


def test_fixed_speed_pump_inertia_excludes_load_relief(plant):
    r = synthetic_inertia_test(plant, FS, mode="pump")
    assert r.passed and r.capability == pytest.approx(62.41, rel=0.02)


def test_ffr_n_opt_is_minimum_speed(plant):
    from hydroflex.qualification import _initial_speed
    cfg = configure(plant, VS).units[0].config
    assert _initial_speed(cfg, "n_opt") == cfg.n_min
