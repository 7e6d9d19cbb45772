"""
Water hammer and surge tank oscillation
=======================================

A reservoir feeds a 1 km pipe ending in a valve. Slamming the valve shut
raises the head at the valve by roughly a*dV/g for one reflection period;
adding a surge tank turns the hammer into a slow mass oscillation.
"""

import math

import numpy as np

from hydroflex.hydraulics import G, build_network, simulate, steady_state

# a frictionless line, 50 lumped segments
line = build_network({
    "reservoir": [{"id": "res", "elevation": 100.0}],
    "pipe": [{"id": "p", "length": 1000.0, "diameter": 1.0, "wave_speed": 1000.0, "n_segments": 50}],
    "valve": [{"id": "v", "discharge_area": 0.05, "outlet_head": 0.0}],
    "junction": [{"id": "j1", "ports": ["res", "p.in"]}, {"id": "j2", "ports": ["p.out", "v.in"]}],
})
s0 = steady_state(line)
v0 = s0.branch_flows[0] / (math.pi / 4)
print(f"steady flow {s0.branch_flows[0]:.3f} m3/s, velocity {v0:.3f} m/s")

trace = np.array(simulate(line, s0, 0.01, 4.0, valve_openings={"v": lambda t: 0.0},
                          record=lambda s: (s.t, s.head("j2"))))
surge = trace[(trace[:, 0] > 0.05) & (trace[:, 0] < 1.95), 1].mean() - s0.head("j2")
print(f"surge over the first 2L/a: {surge:.2f} m  (a*dV/g = {1000.0 * v0 / G:.2f} m)")

# the surge reverses after each 2L/a reflection (no cavitation model, so heads can go negative)
for t in (0.5, 1.5, 2.5, 3.5):
    k = int(t / 0.01)
    print(f"  t = {t:.1f} s  head at valve {trace[k, 1]:7.1f} m")

# same line with a surge tank at the valve end, valve closed over 1 s
tank = build_network({
    "reservoir": [{"id": "res", "elevation": 100.0}],
    "pipe": [{"id": "p", "length": 1000.0, "diameter": 2.0, "wave_speed": 1000.0, "n_segments": 5}],
    "surge_tank": [{"id": "st", "cross_section": 20.0, "base_elevation": 50.0, "max_level": 200.0}],
    "valve": [{"id": "v", "discharge_area": 0.1, "outlet_head": 0.0}],
    "junction": [{"id": "j1", "ports": ["res", "p.in"]}, {"id": "j2", "ports": ["p.out", "st", "v.in"]}],
})
s1 = steady_state(tank)
rec = np.array(simulate(tank, s1, 0.05, 300.0, valve_openings={"v": lambda t: max(0.0, 1.0 - t)},
                        record=lambda s: (s.t, s.tank_level("st"))))
z = rec[:, 1] - 100.0
# zero crossings come every half period
cross = np.flatnonzero(np.sign(z[:-1]) * np.sign(z[1:]) < 0)
period = 2.0 * np.mean(np.diff(rec[cross, 0]))
print(f"surge tank swing +-{np.abs(z).max():.2f} m, period {period:.1f} s "
      f"(frictionless estimate {2 * math.pi * math.sqrt(1000.0 * 20.0 / (G * math.pi)):.1f} s)")
