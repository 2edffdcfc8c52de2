"""Private-vehicle demand, route choice and bus services.

Private trips arrive as independent Poisson streams per origin/destination
pair with piecewise-constant rates.  Routes are drawn at trip start from
the ``k`` shortest free-flow paths with logit weights ``exp(-theta * cost)``.
Buses depart with exponential headways on fixed routes and carry a
truncated-normal passenger load.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence, TextIO

import networkx as nx
import numpy as np

from .network import ConfigurationError, NetworkGraph

__all__ = [
    "OccupancyDistribution",
    "PRIVATE_OCCUPANCY",
    "DemandProfile",
    "BusRoute",
    "Arrival",
    "BusDeparture",
    "SubScenario",
    "RouteChoice",
    "substream",
    "grid_demand_profile",
    "generate_private_arrivals",
    "assign_route",
    "generate_bus_trips",
    "bus_route_path",
    "empirical_turn_ratios",
    "scenario_matrix",
    "desk_bus_routes",
    "full_bus_routes",
    "write_arrivals_csv",
    "write_departures_csv",
    "PEAK_MULTIPLIERS",
    "FULL_TOTALS",
]

# stream ids for named substreams of one master seed
STREAMS = {"demand": 1, "routing": 2, "bus": 3, "sensing": 4, "apc": 5, "saturation": 6, "occupancy": 7}


def substream(seed: int | np.random.SeedSequence, name: str, *keys: int) -> np.random.Generator:
    """Generator for the named substream of a master seed (plus optional sub-keys)."""
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    ss = np.random.SeedSequence(root.entropy, spawn_key=root.spawn_key + (STREAMS[name],) + tuple(keys))
    return np.random.default_rng(ss)


def seed_sequence(seed: int, name: str) -> np.random.SeedSequence:
    root = np.random.SeedSequence(int(seed))
    return np.random.SeedSequence(root.entropy, spawn_key=(STREAMS[name],))


@dataclass(frozen=True)
class OccupancyDistribution:
    support: tuple[int, ...]
    probabilities: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.support) != len(self.probabilities) or not self.support:
            raise ConfigurationError("occupancy support and probabilities differ in length")
        if any(v < 1 for v in self.support):
            raise ConfigurationError("occupancy values must be >= 1")
        if any(p < 0 for p in self.probabilities) or abs(sum(self.probabilities) - 1.0) > 1e-12:
            raise ConfigurationError("occupancy probabilities must be >= 0 and sum to 1")

    @property
    def mean(self) -> float:
        return float(sum(v * p for v, p in zip(self.support, self.probabilities)))

    def sample(self, rng: np.random.Generator, size: int | None = None):
        return rng.choice(np.asarray(self.support), size=size, p=np.asarray(self.probabilities))


PRIVATE_OCCUPANCY = OccupancyDistribution((1, 2, 3, 4, 5), (0.7, 0.125, 0.1, 0.05, 0.025))

# peak-period shape: four equal intervals, then a cooldown with no demand
PEAK_MULTIPLIERS = (0.6, 1.0, 1.4, 0.8)
# expected entering vehicles over the two-hour peak on the 8x8 grid
FULL_TOTALS = {"high": 32256.0, "low": 23040.0}


@dataclass(frozen=True)
class DemandProfile:
    od_pairs: tuple[tuple[str, str, float], ...]  # origin, destination, base rate veh/h
    interval_multipliers: tuple[tuple[float, float], ...]  # duration s, factor

    def __post_init__(self) -> None:
        if any(rate < 0 for _, _, rate in self.od_pairs):
            raise ConfigurationError("demand rates must be >= 0")
        if any(f < 0 or d < 0 for d, f in self.interval_multipliers):
            raise ConfigurationError("interval durations and multipliers must be >= 0")

    @property
    def total_target(self) -> float:
        """Expected number of entering vehicles over all intervals."""
        weight_h = sum(d * f for d, f in self.interval_multipliers) / 3600.0
        return sum(rate for _, _, rate in self.od_pairs) * weight_h

    @property
    def duration(self) -> float:
        return sum(d for d, _ in self.interval_multipliers)

    def origin_rates(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for o, _, rate in self.od_pairs:
            out[o] = out.get(o, 0.0) + rate
        return out


def grid_demand_profile(
    network: NetworkGraph,
    total_target: float,
    interval_duration: float,
    multipliers: Sequence[float] = PEAK_MULTIPLIERS,
    cooldown: float = 0.0,
    ns_ew_ratio: float = 2.0,
) -> DemandProfile:
    """Symmetric perimeter demand hitting ``total_target`` expected entries.

    Origins on the north and south edges get ``ns_ew_ratio`` times the rate of
    east/west origins; each origin spreads its rate evenly over all other
    centroids.
    """
    intervals = tuple((interval_duration, float(f)) for f in multipliers)
    if cooldown > 0:
        intervals += ((cooldown, 0.0),)
    weight_h = sum(d * f for d, f in intervals) / 3600.0
    names = [c.name for c in network.centroids]
    side_weight = {c.name: (ns_ew_ratio if c.side in "NS" else 1.0) for c in network.centroids}
    denom = sum(side_weight.values()) * weight_h
    unit = total_target / denom if denom > 0 else 0.0
    pairs = []
    for o in names:
        dests = [d for d in names if d != o]
        for d in dests:
            pairs.append((o, d, unit * side_weight[o] / len(dests)))
    return DemandProfile(tuple(pairs), intervals)


class Arrival(NamedTuple):
    time: float
    origin: str
    destination: str
    occupancy: int


def generate_private_arrivals(
    profile: DemandProfile,
    horizon: float,
    seed: int | np.random.SeedSequence,
    occupancy: OccupancyDistribution = PRIVATE_OCCUPANCY,
) -> list[Arrival]:
    """Time-ordered Poisson arrivals, one independent substream per O-D pair."""
    out: list[tuple[float, int, int, Arrival]] = []
    for k, (o, d, rate) in enumerate(profile.od_pairs):
        rng = substream(seed, "demand", k)
        t0 = 0.0
        times = []
        for dur, factor in profile.interval_multipliers:
            t1 = min(t0 + dur, horizon)
            lam = rate * factor * (t1 - t0) / 3600.0
            if lam > 0 and t1 > t0:
                n = rng.poisson(lam)
                times.append(np.sort(rng.uniform(t0, t1, size=n)))
            t0 += dur
            if t0 >= horizon:
                break
        if not times:
            continue
        ts = np.concatenate(times)
        occ = occupancy.sample(rng, size=len(ts)) if len(ts) else []
        for j, (t, c) in enumerate(zip(ts.tolist(), np.asarray(occ).tolist())):
            out.append((t, k, j, Arrival(t, o, d, int(c))))
    out.sort(key=lambda r: r[:3])
    return [r[3] for r in out]


def _node_graph(network: NetworkGraph) -> tuple[nx.DiGraph, dict[tuple, int]]:
    g = nx.DiGraph()
    edge_link: dict[tuple, int] = {}
    for link in network.links:
        u = link.from_node if link.from_node is not None else ("o", link.name.split(">")[0])
        v = link.to_node if link.to_node is not None else ("d", link.name.split(">")[1])
        g.add_edge(u, v, weight=link.free_flow_time)
        edge_link[(u, v)] = link.id
    return g, edge_link


class RouteChoice:
    """k-shortest-path logit route choice on free-flow travel time.

    ``theta`` is the logit dispersion in 1/s; ``math.inf`` always picks the
    first shortest path.
    """

    def __init__(self, network: NetworkGraph, k: int = 3, theta: float = 0.05) -> None:
        if k < 1:
            raise ConfigurationError("k must be >= 1")
        self.network = network
        self.k = k
        self.theta = theta
        self._graph, self._edge_link = _node_graph(network)
        self._cache: dict[tuple[str, str], tuple[list[tuple[int, ...]], np.ndarray]] = {}

    def paths(self, origin: str, destination: str) -> tuple[list[tuple[int, ...]], list[float]]:
        """The k shortest loop-free link paths and their free-flow costs (s)."""
        if origin == destination:
            raise ConfigurationError("origin and destination must differ")
        src, dst = ("o", origin), ("d", destination)
        if src not in self._graph or dst not in self._graph:
            raise ConfigurationError(f"unknown centroid in {origin}->{destination}")
        try:
            gen = nx.shortest_simple_paths(self._graph, src, dst, weight="weight")
            node_paths = list(itertools.islice(gen, self.k))
        except nx.NetworkXNoPath:
            raise ConfigurationError(f"no path from {origin} to {destination}") from None
        links = [tuple(self._edge_link[(a, b)] for a, b in zip(p, p[1:])) for p in node_paths]
        costs = [sum(self.network.links[l].free_flow_time for l in p) for p in links]
        return links, costs

    def probabilities(self, costs: Sequence[float]) -> np.ndarray:
        c = np.asarray(costs, dtype=float)
        if math.isinf(self.theta):
            p = (c == c.min()).astype(float)
            p[np.argmax(p)] = 1.0
            p[np.arange(len(p)) != np.argmax(p)] = 0.0
            return p
        u = np.exp(-self.theta * (c - c.min()))
        return u / u.sum()

    def sample(self, origin: str, destination: str, rng: np.random.Generator) -> tuple[int, ...]:
        key = (origin, destination)
        if key not in self._cache:
            links, costs = self.paths(origin, destination)
            self._cache[key] = (links, np.cumsum(self.probabilities(costs)))
        links, cdf = self._cache[key]
        if len(links) == 1:
            return links[0]
        i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        return links[min(i, len(links) - 1)]


def assign_route(
    network: NetworkGraph,
    origin: str,
    destination: str,
    rng: np.random.Generator,
    theta: float = 0.05,
    k: int = 3,
) -> tuple[int, ...]:
    return RouteChoice(network, k, theta).sample(origin, destination, rng)


@dataclass(frozen=True)
class BusRoute:
    name: str
    waypoints: tuple[str, ...]  # centroid names or intersection names (r<i>c<j>)
    direction: str = "uni"  # "uni" or "bi"
    headway_mean: float = 120.0  # s
    occupancy_mean: float = 50.0
    occupancy_spread: float | None = None  # std; default 20 % of the mean
    capacity: int = 100

    def __post_init__(self) -> None:
        if self.direction not in ("uni", "bi"):
            raise ConfigurationError(f"bus route {self.name}: direction must be uni or bi")
        if not self.headway_mean > 0:
            raise ConfigurationError(f"bus route {self.name}: headway_mean must be > 0")
        if not 1 <= self.occupancy_mean <= self.capacity:
            raise ConfigurationError(f"bus route {self.name}: occupancy_mean outside [1, capacity]")
        if len(self.waypoints) < 2:
            raise ConfigurationError(f"bus route {self.name}: needs at least two waypoints")

    @property
    def spread(self) -> float:
        return 0.2 * self.occupancy_mean if self.occupancy_spread is None else self.occupancy_spread

    def services(self) -> list[tuple[str, tuple[str, ...]]]:
        """(service name, waypoints) for each running direction."""
        if self.direction == "uni":
            return [(self.name, self.waypoints)]
        return [(f"{self.name}:fwd", self.waypoints), (f"{self.name}:rev", tuple(reversed(self.waypoints)))]

    def sample_occupancy(self, rng: np.random.Generator, size: int) -> np.ndarray:
        out = np.empty(size, dtype=int)
        filled = 0
        while filled < size:
            draw = np.rint(rng.normal(self.occupancy_mean, self.spread, size=size - filled))
            ok = draw[(draw >= 1) & (draw <= self.capacity)]
            out[filled:filled + len(ok)] = ok
            filled += len(ok)
        return out


def bus_route_path(network: NetworkGraph, waypoints: Sequence[str]) -> tuple[int, ...]:
    """Link path from the first to the last waypoint through the intermediate ones.

    The first and last waypoints must be centroids; intermediate ones are
    intersections named ``r<row>c<col>``. Each leg is a shortest path.
    """
    g, edge_link = _node_graph(network)
    names = {n.name: n.id for n in network.intersections}
    centroids = {c.name for c in network.centroids}
    if waypoints[0] not in centroids or waypoints[-1] not in centroids:
        raise ConfigurationError(f"bus waypoints must start and end at centroids: {waypoints}")
    nodes: list = [("o", waypoints[0])]
    for w in waypoints[1:-1]:
        if w not in names:
            raise ConfigurationError(f"unknown waypoint {w}")
        nodes.append(names[w])
    nodes.append(("d", waypoints[-1]))
    path: list = [nodes[0]]
    for a, b in zip(nodes, nodes[1:]):
        try:
            leg = nx.shortest_path(g, a, b, weight="weight")
        except nx.NetworkXNoPath:
            raise ConfigurationError(f"no path between waypoints {a} and {b}") from None
        path.extend(leg[1:])
    if len(set(path)) != len(path):
        raise ConfigurationError(f"bus route through {waypoints} revisits a node")
    return tuple(edge_link[(a, b)] for a, b in zip(path, path[1:]))


class BusDeparture(NamedTuple):
    time: float
    route: str
    occupancy: int


def generate_bus_trips(
    routes: Sequence[BusRoute],
    horizon: float,
    seed: int | np.random.SeedSequence,
) -> list[BusDeparture]:
    """Departures with exponential headways on every service of every route."""
    out = []
    k = 0
    for route in routes:
        for service, _ in route.services():
            rng = substream(seed, "bus", k)
            k += 1
            times = []
            t = rng.exponential(route.headway_mean)
            while t < horizon:
                times.append(t)
                t += rng.exponential(route.headway_mean)
            occ = route.sample_occupancy(rng, len(times))
            out.extend((t, k, j, BusDeparture(t, service, int(o))) for j, (t, o) in enumerate(zip(times, occ)))
    out.sort(key=lambda r: r[:3])
    return [r[3] for r in out]


def empirical_turn_ratios(network: NetworkGraph, routes: Iterable[Sequence[int]]) -> list[float]:
    """Turn fractions r(l,m) counted over ``routes``; unused links split evenly."""
    counts = [0] * len(network.movements)
    for route in routes:
        for a, b in zip(route, route[1:]):
            mid = network.movement_between(a, b)
            if mid is not None:
                counts[mid] += 1
    ratios = [0.0] * len(network.movements)
    for link in network.links:
        outs = network.movements_from(link.id)
        if not outs:
            continue
        total = sum(counts[m] for m in outs)
        for m in outs:
            ratios[m] = counts[m] / total if total else 1.0 / len(outs)
    return ratios


@dataclass(frozen=True)
class SubScenario:
    index: int
    private_demand: str
    bus_passenger_demand: str
    bus_frequency: str


def scenario_matrix() -> list[SubScenario]:
    """The eight sub-scenarios: private demand x bus passengers x bus frequency."""
    rows = [
        ("low", "high", "high"),
        ("low", "high", "low"),
        ("low", "low", "high"),
        ("low", "low", "low"),
        ("high", "high", "high"),
        ("high", "high", "low"),
        ("high", "low", "high"),
        ("high", "low", "low"),
    ]
    return [SubScenario(i + 1, *r) for i, r in enumerate(rows)]


# (name, waypoints, direction, occupancy class)
_DESK_ROUTES = (
    ("W", ("N0", "S0"), "bi", "high"),
    ("C", ("N2", "S2"), "bi", "high"),
    ("N", ("W0", "E0"), "bi", "high"),
    ("EB-CN", ("W1", "E1"), "uni", "high"),
    ("WB-CS", ("E2", "W2"), "uni", "low"),
    ("EB-SN", ("W3", "E3"), "uni", "low"),
    ("WB-SS", ("E3", "W3"), "uni", "low"),
)
_FULL_ROUTES = (
    ("W", ("N1", "S1"), "bi", "high"),
    ("C", ("N4", "S4"), "bi", "high"),
    ("N", ("W1", "E1"), "bi", "high"),
    ("EB-CN", ("W3", "E3"), "uni", "high"),
    ("WB-CS", ("E4", "W4"), "uni", "low"),
    ("EB-SN", ("W5", "E5"), "uni", "low"),
    ("WB-SS", ("E6", "W6"), "uni", "low"),
)
# mean passengers per bus: passenger-demand level -> occupancy class -> mean
BUS_OCCUPANCY = {"high": {"high": 50.0, "low": 25.0}, "low": {"high": 12.0, "low": 3.0}}
BUS_HEADWAY = {"high": 120.0, "low": 300.0}


def _routes(table, passenger_demand: str, frequency: str) -> list[BusRoute]:
    return [
        BusRoute(name, wps, direction, BUS_HEADWAY[frequency], BUS_OCCUPANCY[passenger_demand][cls])
        for name, wps, direction, cls in table
    ]


def desk_bus_routes(passenger_demand: str = "high", frequency: str = "high") -> list[BusRoute]:
    """Default services on the 4x4 grid: three two-way and four one-way routes."""
    return _routes(_DESK_ROUTES, passenger_demand, frequency)


def full_bus_routes(passenger_demand: str = "high", frequency: str = "high") -> list[BusRoute]:
    """Default services on the 8x8 grid (geometry is a documented guess)."""
    return _routes(_FULL_ROUTES, passenger_demand, frequency)


def write_arrivals_csv(stream: TextIO, arrivals: Iterable[Arrival]) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["time_s", "origin", "destination", "occupancy"])
    for a in arrivals:
        w.writerow([f"{a.time:.6f}", a.origin, a.destination, a.occupancy])


def write_departures_csv(stream: TextIO, departures: Iterable[BusDeparture]) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["time_s", "route", "occupancy"])
    for d in departures:
        w.writerow([f"{d.time:.6f}", d.route, d.occupancy])
