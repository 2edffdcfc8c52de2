"""What the controller sees: fixed-average occupancy, partial penetration, APC error.

Run: python3 demos/04_sensing.py
"""

from __future__ import annotations

import numpy as np

from occmp.dynamics import TrafficState, Vehicle
from occmp.network import build_grid
from occmp.sensing import SensingConfig, apc_perturb, observe

net = build_grid(1, 1)
node = net.intersections[0]
ratios = [m.turn_ratio for m in net.movements]
occupancies = [1, 4, 2, 1, 3, 1]
# connectivity is drawn once per vehicle; here cars 2 and 5 are not connected
unconnected = {1, 4}


def queue_state(with_flags: bool) -> TrafficState:
    state = TrafficState(net, 1.0)
    ms = state.movement_states[0]
    for i, occ in enumerate(occupancies):
        ms.push(Vehicle(i, "car", occ, (), 0.0, connected=not (with_flags and i in unconnected)))
    ms.push(Vehicle(99, "bus", 30, (), 0.0))
    return state


print(f"queue: cars with occupancies {occupancies} plus a bus carrying 30")
for label, cfg, flags in [
    ("exact, all connected", SensingConfig(), False),
    ("fixed 1.5 persons per car", SensingConfig(private_occupancy_mode="fixed_average"), False),
    ("exact, two cars unconnected", SensingConfig(cv_penetration=0.7), True),
]:
    obs = observe(queue_state(flags), node, cfg, ratios)
    print(f"  {label:28s} queue {obs.queue[0]}  occupancy sum {obs.occupancy_sum[0]:g}")

# APC error accumulates over crossings: std grows with the square root of the count
rng = np.random.default_rng(0)
cfg = SensingConfig.from_percent(40)
for k in (1, 4, 9):
    errs = []
    for _ in range(5000):
        bus = Vehicle(0, "bus", 50, (), 0.0)
        for _ in range(k):
            apc_perturb(bus, cfg, rng)
        errs.append(bus.apc_error)
    print(f"after {k} crossings: APC error std {np.std(errs):5.1f} persons (expected {20 * np.sqrt(k):.0f})")
