"""Build a grid network and push a few vehicles through the point-queue model.

Run: python3 demos/01_network_and_dynamics.py
"""

from __future__ import annotations

from occmp.controllers import QMP
from occmp.demand import RouteChoice
from occmp.dynamics import Vehicle
from occmp.network import build_grid
from occmp.simulation import simulate

net = build_grid(2, 2)
print(f"2x2 grid: {len(net.intersections)} intersections, {len(net.links)} links, {len(net.movements)} movements")
link = net.link_by_name("N0>r0c0")
print(f"{link.name}: length {link.length} m, storage {link.storage_capacity} veh, "
      f"free-flow time {link.free_flow_time:.1f} s")
node = net.intersections[0]
for ph in node.phases:
    turns = [f"{net.links[net.movements[m].upstream].name}:{net.movements[m].turn}" for m in ph.served_movements]
    print(f"  phase {ph.id}: {', '.join(turns)}")

# twenty vehicles from the north-west corner to the south-east one
rc = RouteChoice(net, k=1)
route = rc.paths("N0", "S1")[0][0]
vehicles = [Vehicle(i, "car", 1, route, float(2 * i)) for i in range(20)]
res = simulate(net, QMP(), vehicles, 300.0, sample_every=30.0)
for t, entered, exited, census in res.samples:
    print(f"t={t:5.0f} s  entered {entered:2d}  exited {exited:2d}  in network {census:2d}")
print("mean travel time", sum(v.exit_time - v.entry_time for v in res.vehicles) / len(vehicles), "s")
