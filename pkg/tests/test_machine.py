import dataclasses
import math

import numpy as np
import pytest

from hydroflex.hydraulics import SimulationError
from hydroflex.machine import (
    Bess,
    MachineCharacteristic,
    StallError,
    UnitConfig,
    bess_step,
    electrical_coupling_step,
    inertia_from_tau,
    kinetic_energy,
    rpm_to_rad,
    swing_step,
    tau_from_inertia,
)


def unit(**kw):
    base = dict(id="u", rated_power=395.0, rated_apparent_power=420.0, tau_m=7.9, n_synch=375.0,
                n_min=350.0, n_middle=365.5, n_max=381.0, h_min=413.64, h_max=431.8,
                turbine_range=(186.4, 372.8), pump_range=(-300.0, -390.0))
    base.update(kw)
    return UnitConfig(**base)


@pytest.fixture(scope="module")
def char():
    return MachineCharacteristic.synthetic_pump_turbine()


def test_tau_roundtrip():
    J = inertia_from_tau(7.9, 395.0, 375.0)
    assert tau_from_inertia(J, 395.0, 375.0) == pytest.approx(7.9, rel=1e-12)
    # kinetic energy at rated speed is tau_m * P / 2
    assert kinetic_energy(J, 375.0) == pytest.approx(0.5 * 7.9 * 395e6, rel=1e-12)


def test_swing_step_constant_torque_is_exact():
    J = inertia_from_tau(7.9, 395.0, 375.0)
    dT, dt = 1e5, 0.01
    n1 = swing_step(375.0, dT, 0.0, J, dt)
    assert rpm_to_rad(n1) - rpm_to_rad(375.0) == pytest.approx(dT * dt / J, rel=1e-12)


def test_swing_balanced_torque_holds_speed():
    assert swing_step(375.0, 5e6, 5e6, 1e6, 0.01) == pytest.approx(375.0, rel=1e-15)


def test_lookup_is_exact_on_grid_nodes(char):
    i, j, k = 3, 1, 2
    q, t, _, ext = char.lookup_pu(char.n_grid[i], char.h_grid[j], char.y_grid[k])
    assert q == pytest.approx(char.q_table[i, j, k]) and t == pytest.approx(char.t_table[i, j, k])
    assert not ext


def test_lookup_is_trilinear(char):
    n = 0.5 * (char.n_grid[-2] + char.n_grid[-3])
    h = 0.5 * (char.h_grid[1] + char.h_grid[2])
    y = 0.5 * (char.y_grid[3] + char.y_grid[4])
    q, *_ = char.lookup_pu(n, h, y)
    i = char.n_grid.index(char.n_grid[-3])
    corners = char.q_table[i:i + 2, 1:3, 3:5]
    assert q == pytest.approx(corners.mean(), rel=1e-12)


def test_outside_hull_flags_extrapolation(char):
    *_, ext = char.lookup_pu(char.n_grid[-1] * 1.5, 1.0, 0.5)
    assert ext


def test_turbine_side_monotone_in_opening(char):
    assert char.monotone_in_y(0.0)


def test_csv_roundtrip(tmp_path, char):
    path = tmp_path / "hill.csv"
    char.to_csv(path)
    back = MachineCharacteristic.from_csv(path)
    np.testing.assert_array_equal(back.q_table, char.q_table)
    np.testing.assert_array_equal(back.t_table, char.t_table)
    assert back.n_ref == char.n_ref


def test_flow_law_derivative_matches_finite_difference(char):
    law = char.flow_law(375.0, 0.7)
    H = 420.0
    q, dq = law(H)
    q2, _ = law(H + 1e-3)
    assert dq == pytest.approx((q2 - q) / 1e-3, rel=1e-3)


@pytest.mark.parametrize("kw", [
    dict(n_middle=390.0),
    dict(pump_range=(-300.0, -300.0)),
    dict(turbine_range=(300.0, 200.0)),
    dict(tau_m=0.0),
    dict(technology="fixed"),
])
def test_unit_invariants(kw):
    with pytest.raises(ValueError):
        unit(**kw)


def test_power_range_scales_with_head():
    u = unit()
    lo, hi = u.power_range("turbine", head=u.h_min * 1.1)
    assert hi == pytest.approx(372.8 * 1.1**1.5)
    assert u.power_range("pump") == (-390.0, -300.0)


def test_fixed_speed_follows_grid_and_releases_kinetic_energy():
    u = unit(technology="fixed", n_min=375.0, n_middle=375.0, n_max=375.0)
    dt = 0.01
    r = electrical_coupling_step(u, P_elec=300.0, P_mech=300.0, n_rpm=375.0, f_grid=49.99, f_grid_prev=50.0, dt=dt)
    assert r.n == pytest.approx(375.0 * 49.99 / 50.0)
    dE = kinetic_energy(u.inertia, 375.0) - kinetic_energy(u.inertia, r.n)
    assert r.P_elec - 300.0 == pytest.approx(dE / dt / 1e6, rel=1e-9)


def test_converter_lag_is_exact_exponential():
    u = unit()
    p, dt = 0.0, 0.01
    for _ in range(10):
        p = electrical_coupling_step(u, P_elec=p, P_mech=0.0, n_rpm=365.5, f_grid=50.0, P_set=100.0, dt=dt).P_elec
    assert p == pytest.approx(100.0 * (1 - math.exp(-0.1 / u.converter_lag)), rel=1e-12)


def test_strategy_switch_flag_outside_speed_window():
    u = unit()
    r = electrical_coupling_step(u, P_elec=100.0, P_mech=100.0, n_rpm=349.0, f_grid=50.0, P_set=100.0, dt=0.01)
    assert r.strategy_switch


def test_fsfc_stall():
    u = unit(technology="FSFC")
    with pytest.raises(StallError):
        electrical_coupling_step(u, P_elec=100.0, P_mech=100.0, n_rpm=150.0, f_grid=50.0, P_set=100.0, dt=0.01)


def test_converter_rating_exceeded():
    u = dataclasses.replace(unit(), converter_lag=1e-6)
    with pytest.raises(SimulationError):
        electrical_coupling_step(u, P_elec=0.0, P_mech=0.0, n_rpm=365.5, f_grid=50.0, P_set=500.0, dt=0.01)


def test_bess_clamps_power_and_energy():
    b = Bess(rated_power=10.0, energy_capacity=1.0, soc=0.5, response_time_constant=0.0)
    s = bess_step(b, 50.0, 1.0)
    assert s.power == 10.0 and s.saturated
    assert s.soc == pytest.approx(0.5 - 10.0 / 3600.0)
    empty = Bess(rated_power=10.0, energy_capacity=1e-3, soc=0.0, response_time_constant=0.0)
    assert bess_step(empty, 5.0, 1.0).power == 0.0


def test_bess_soc_stays_in_bounds():
    b = Bess(rated_power=10.0, energy_capacity=0.01, soc=0.5)
    rng = np.random.default_rng(0)
    for cmd in rng.uniform(-20, 20, 500):
        s = bess_step(b, float(cmd), 1.0)
        assert 0.0 <= s.soc <= 1.0
