"""Private demand, route choice and bus services for the desk-scale grid.

Run: python3 demos/03_demand_and_buses.py [output-dir]
"""

from __future__ import annotations

import sys
from collections import Counter
from pathlib import Path

from occmp.demand import (
    PRIVATE_OCCUPANCY,
    RouteChoice,
    desk_bus_routes,
    generate_bus_trips,
    generate_private_arrivals,
    grid_demand_profile,
    scenario_matrix,
    substream,
    write_arrivals_csv,
    write_departures_csv,
)
from occmp.network import build_grid

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo-output")
out.mkdir(exist_ok=True)

print("sub-scenarios (private demand, bus passengers, bus frequency):")
for s in scenario_matrix():
    print(f"  {s.index}: {s.private_demand}/{s.bus_passenger_demand}/{s.bus_frequency}")

net = build_grid(4, 4)
profile = grid_demand_profile(net, 4320.0, 675.0, cooldown=900.0)
arrivals = generate_private_arrivals(profile, profile.duration, seed=1)
print(f"\n{len(arrivals)} private arrivals (target {profile.total_target:.0f}); "
      f"mean occupancy {sum(a.occupancy for a in arrivals) / len(arrivals):.3f} "
      f"(distribution mean {PRIVATE_OCCUPANCY.mean:.3f})")
per_quarter = Counter(int(a.time // 675) for a in arrivals)
print("arrivals per 675 s interval:", [per_quarter[i] for i in range(5)])

rc = RouteChoice(net, k=3, theta=0.05)
paths, costs = rc.paths("N0", "S3")
print("\nN0 -> S3 candidate paths (free-flow s):", [round(c, 1) for c in costs])
print("logit probabilities:", rc.probabilities(costs).round(3).tolist())
rng = substream(1, "routing")
print("sampled:", [net.links[l].name for l in rc.sample("N0", "S3", rng)])

routes = desk_bus_routes("high", "high")
deps = generate_bus_trips(routes, 2700.0, seed=1)
print(f"\n{len(deps)} bus departures over the peak:", dict(Counter(d.route for d in deps)))

with open(out / "arrivals.csv", "w", newline="") as fh:
    write_arrivals_csv(fh, arrivals)
with open(out / "departures.csv", "w", newline="") as fh:
    write_departures_csv(fh, deps)
print("wrote", out / "arrivals.csv", "and", out / "departures.csv")
