"""The two-approach worked example: occupancy changes the max-pressure choice.

West-east carries three vehicles (a 20-person van and two 2-person cars)
and north-south five single-occupant cars; both feed downstream queues of
two. Q-MP serves the longer queue, OCC-MP the heavier one.

Run: python3 demos/02_controllers_figure1.py
"""

from __future__ import annotations

from occmp.controllers import OCCMP, QMP, RBMP, Observation, occmp_weight, qmp_weight

phases = [("WE",), ("NS",)]
saturation = {"WE": 0.5, "NS": 0.5}  # veh/s
obs = Observation(
    queue={"WE": 3, "NS": 5},
    occupancy_sum={"WE": 24, "NS": 5},
    bus_count={"WE": 0, "NS": 0},
    downstream={"WE": ((2, 1.0),), "NS": ((2, 1.0),)},
)
for m in ("WE", "NS"):
    print(f"{m}: Q-MP weight {qmp_weight(obs, m):g}, OCC-MP weight {occmp_weight(obs, m):g}")
for ctrl in (QMP(), OCCMP()):
    dec = ctrl.decide(obs, phases, saturation)
    print(f"{ctrl.name}: pressures {dec.pressures} -> serve {phases[dec.phase][0]}")

# with a bus detected on west-east the rule-based controller serves it outright
bus_obs = Observation(obs.queue, obs.occupancy_sum, {"WE": 1, "NS": 0}, obs.downstream)
print("rbmp with a bus on WE ->", phases[RBMP().decide(bus_obs, phases, saturation).phase][0])
