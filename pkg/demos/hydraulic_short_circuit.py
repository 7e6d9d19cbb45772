"""
Hydraulic short circuit: one unit pumps while the other generates
=================================================================

In HSC the plant's reserve is the sum of what the turbine can add or shed
and what the pump can shed or add. A variable speed pump contributes a
power band of its own, a fixed speed pump contributes nothing.
"""

from hydroflex import TechnologyStack, load_plant
from hydroflex.control import HscUnit, hsc_band, hsc_dispatch
from hydroflex.qualification import afrr_capability

units = [HscUnit("turbine", "turbine", 186.4, 0.0, 372.8),
         HscUnit("pump", "pump", -345.0, -390.0, -300.0)]
print(f"symmetric HSC band: +-{hsc_band(units):.1f} MW")

# a 150 MW request is spread over both units; the result is each unit's new setpoint
for req in (150.0, -150.0):
    split = hsc_dispatch(req, units)
    print(f"request {req:+.0f} MW ->", ", ".join(f"{k} {v:+.1f} MW" for k, v in split.items()))

plant = load_plant()
rep = afrr_capability(plant, TechnologyStack.parse("VS(DFIM)+SPPS+HSC"), "HSC")
print(f"\naFRR in HSC, simulated: {rep.capability:.1f} MW ({'pass' if rep.passed else 'fail'})")
