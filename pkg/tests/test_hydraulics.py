import math

import numpy as np
import pytest

from hydroflex.hydraulics import (
    G,
    NetworkError,
    Pipe,
    SimulationError,
    SurgeTank,
    Valve,
    build_network,
    simulate,
    steady_state,
    step,
    valve_flow,
)


def valve_line(n_segments=50, length=1000.0, wave=1000.0, diameter=1.0, friction=0.0):
    return build_network({
        "reservoir": [{"id": "res", "elevation": 100.0}],
        "pipe": [{"id": "p", "length": length, "diameter": diameter, "wave_speed": wave,
                  "friction_factor": friction, "n_segments": n_segments}],
        "valve": [{"id": "v", "discharge_area": 0.05, "outlet_head": 0.0}],
        "junction": [{"id": "j1", "ports": ["res", "p.in"]}, {"id": "j2", "ports": ["p.out", "v.in"]}],
    })


def tank_line(area=20.0, max_level=200.0):
    return build_network({
        "reservoir": [{"id": "res", "elevation": 100.0}],
        "pipe": [{"id": "p", "length": 1000.0, "diameter": 2.0, "wave_speed": 1000.0, "n_segments": 5}],
        "surge_tank": [{"id": "st", "cross_section": area, "base_elevation": 50.0, "max_level": max_level}],
        "valve": [{"id": "v", "discharge_area": 0.1, "outlet_head": 0.0}],
        "junction": [{"id": "j1", "ports": ["res", "p.in"]}, {"id": "j2", "ports": ["p.out", "st", "v.in"]}],
    })


def closure_surge(n_segments):
    net = valve_line(n_segments)
    s0 = steady_state(net)
    v0 = s0.branch_flows[0] / (math.pi / 4)
    tr = np.array(simulate(net, s0, 0.01, 2.0, valve_openings={"v": lambda t: 0.0},
                           record=lambda s: (s.t, s.head("j2"))))
    # plateau over the first 2L/a reflection window
    win = (tr[:, 0] > 0.05) & (tr[:, 0] < 1.95)
    return tr[win, 1].mean() - s0.head("j2"), 1000.0 * v0 / G


def test_steady_valve_flow_matches_orifice_law():
    s = steady_state(valve_line())
    assert s.branch_flows[0] == pytest.approx(0.05 * math.sqrt(2 * G * 100.0), rel=1e-9)


def test_joukowsky_surge_within_two_percent():
    surge, oracle = closure_surge(50)
    assert surge == pytest.approx(oracle, rel=0.02)


def test_joukowsky_converges_with_refinement():
    coarse, oracle = closure_surge(25)
    fine, _ = closure_surge(50)
    assert abs(fine - oracle) < abs(coarse - oracle)


def test_surge_tank_period():
    net = tank_line()
    s0 = steady_state(net)
    dt = 0.01
    tr = np.array(simulate(net, s0, dt, 400.0, valve_openings={"v": lambda t: 0.0},
                           record=lambda s: (s.t, s.tank_level("st"))))
    z = tr[:, 1] - 100.0
    i = np.flatnonzero((z[:-1] < 0) & (z[1:] >= 0))
    crossings = tr[i, 0] - z[i] * dt / (z[i + 1] - z[i])
    oracle = 2 * math.pi * math.sqrt(1000.0 * 20.0 / (G * math.pi * 2.0**2 / 4))
    assert np.mean(np.diff(crossings)) == pytest.approx(oracle, rel=0.03)


def test_junction_continuity_during_transient():
    net = tank_line()
    s0 = steady_state(net)
    imb = simulate(net, s0, 0.01, 20.0, valve_openings={"v": lambda t: max(0.0, 1 - t / 5)},
                   record=lambda s: max(abs(x) for x in s.junction_imbalance().values()))
    assert max(imb) < 1e-6


def test_friction_loss_in_steady_state():
    net = valve_line(n_segments=4, friction=0.02)
    s = steady_state(net)
    q = s.branch_flows[0]
    loss = Pipe("x", 1000.0, 1.0, 1000.0, 0.02).head_loss(q)
    assert 100.0 - s.head("j2") == pytest.approx(loss, rel=1e-6)


def test_step_matches_simulate():
    net = tank_line()
    s0 = steady_state(net)
    a = simulate(net, s0, 0.01, 0.5, valve_openings={"v": 0.5})[-1]
    b = s0
    for _ in range(50):
        b = step(net, b, 0.01, valve_openings={"v": 0.5})
    np.testing.assert_allclose(a.heads, b.heads, rtol=1e-12)


def test_tank_overflow_raises():
    net = tank_line(max_level=103.0)
    s0 = steady_state(net)
    with pytest.raises(SimulationError):
        simulate(net, s0, 0.01, 60.0, valve_openings={"v": lambda t: 0.0})


def test_valve_flow_derivative_is_finite_at_zero_head():
    q, dq = valve_flow(1.0, 0.1, 0.0)
    assert q == 0.0 and math.isfinite(dq)


@pytest.mark.parametrize("bad", [
    lambda: Pipe("p", 0.0, 1.0, 1000.0),
    lambda: Pipe("p", 10.0, 1.0, 1000.0, n_segments=0),
    lambda: SurgeTank("s", 10.0, 50.0, 40.0),
    lambda: Valve("v", 0.1, opening=1.5),
])
def test_invalid_elements_rejected(bad):
    with pytest.raises(NetworkError):
        bad()


def test_dangling_port_rejected():
    with pytest.raises(NetworkError):
        build_network({
            "reservoir": [{"id": "res", "elevation": 100.0}],
            "pipe": [{"id": "p", "length": 10.0, "diameter": 1.0, "wave_speed": 1000.0}],
            "junction": [{"id": "j1", "ports": ["res", "p.in"]}],
        })
