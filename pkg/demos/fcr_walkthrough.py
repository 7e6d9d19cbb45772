"""
Frequency containment reserve on the reference plant
====================================================

A 200 mHz under-frequency step is applied to one unit in turbine mode at
mid-range power. The droop fixes the reserve; the envelope check then asks
whether the response starts within 2 s, is fully deployed within 30 s and
is held. Fixed speed and variable speed units are compared, then the
capability search bisects the reserve until the envelope holds.
"""

import numpy as np

from hydroflex import TechnologyStack, fcr_capability, load_plant
from hydroflex.qualification import fcr_band, run_fcr_test

plant = load_plant()

for label in ("VS(DFIM)+SPPS", "FS+SPPS"):
    stack = TechnologyStack.parse(label)
    p0, rp = fcr_band(plant, stack, "turbine")
    print(f"\n{label}: P0 = {p0:.1f} MW, reserve for 200 mHz = {rp:.1f} MW")

    rep = run_fcr_test(plant, stack, -1, "turbine")
    u = rep.trace.units[plant.units[0].config.id]
    t = rep.trace.t
    for ts in (1.0, 2.0, 10.0, 30.0, 60.0):
        k = int(np.searchsorted(t, ts))
        print(f"  t = {ts:4.0f} s  P = {u['P'][k]:6.1f} MW  n = {u['n'][k]:6.1f} rpm  H = {u['H'][k]:6.1f} m")
    print("  full-reserve step:", "pass" if rep.passed else
          "fail (" + ", ".join(v.quantity for v in rep.violations) + ")")

    cap = fcr_capability(plant, stack, "turbine")
    print(f"  sustained capability: {cap.capability:.1f} MW")
