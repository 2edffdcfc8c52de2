"""Discrete-time store-and-forward propagation with finite link storage.

Vehicles traverse a link at free-flow speed (rounded up to whole steps)
and then join the point queue of the movement their route takes next.
Served movements discharge at saturation flow, limited by the queue and
by the free storage on the receiving link. Per movement this is the queue
update::

    x(t+1) = x(t) + arrivals(t) - min(quota(t) * S(t), x(t), storage share)

Sink links absorb vehicles immediately; blocked entries wait in a virtual
queue at their source link and still count as being in the network.

Within one step the order is: traversal completions join queues, served
movements discharge against the storage observed at the start of the step,
and new arrivals are admitted onto source links.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, TextIO

import numpy as np

from .network import NetworkGraph

__all__ = [
    "InvariantViolation",
    "RouteError",
    "Vehicle",
    "MovementState",
    "SimClock",
    "TrafficState",
    "service_quota",
    "assign_to_movement",
    "allocate_storage",
]


class InvariantViolation(RuntimeError):
    """Fatal inconsistency in the simulated state (negative queue, lost vehicle)."""


class RouteError(ValueError):
    """A vehicle route does not follow adjacent links."""


@dataclass(slots=True, eq=False)
class Vehicle:
    id: int
    kind: str  # "car" or "bus"
    true_occupancy: int
    route: tuple[int, ...]
    entry_time: float
    reported_occupancy: float = -1.0
    connected: bool = True
    route_position: int = 0
    exit_time: float | None = None
    link_arrival_time: float = 0.0
    apc_error: float = 0.0
    route_name: str = ""

    def __post_init__(self) -> None:
        if self.true_occupancy < 1:
            raise ValueError("vehicle occupancy must be >= 1")
        if self.reported_occupancy < 0:
            self.reported_occupancy = float(self.true_occupancy)

    @property
    def is_bus(self) -> bool:
        return self.kind == "bus"


class MovementState:
    """Queue of one movement plus running aggregates used by the sensing layer."""

    __slots__ = (
        "movement", "queue", "occupancy_sum", "bus_count", "carry",
        "cv_count", "cv_private_count", "cv_private_occ", "cv_bus_count", "cv_bus_reported",
    )

    def __init__(self, movement: int) -> None:
        self.movement = movement
        self.queue: deque[Vehicle] = deque()
        self.occupancy_sum = 0
        self.bus_count = 0
        self.carry = 0.0
        self.cv_count = 0
        self.cv_private_count = 0
        self.cv_private_occ = 0
        self.cv_bus_count = 0
        self.cv_bus_reported = 0.0

    @property
    def x(self) -> int:
        return len(self.queue)

    def push(self, v: Vehicle) -> None:
        self.queue.append(v)
        self.occupancy_sum += v.true_occupancy
        bus = v.kind == "bus"
        if bus:
            self.bus_count += 1
        if v.connected:
            self.cv_count += 1
            if bus:
                self.cv_bus_count += 1
                self.cv_bus_reported += v.reported_occupancy
            else:
                self.cv_private_count += 1
                self.cv_private_occ += v.true_occupancy

    def pop(self) -> Vehicle:
        v = self.queue.popleft()
        self.occupancy_sum -= v.true_occupancy
        bus = v.kind == "bus"
        if bus:
            self.bus_count -= 1
        if v.connected:
            self.cv_count -= 1
            if bus:
                self.cv_bus_count -= 1
                self.cv_bus_reported -= v.reported_occupancy
                if self.cv_bus_count == 0:
                    self.cv_bus_reported = 0.0  # drop float residue
            else:
                self.cv_private_count -= 1
                self.cv_private_occ -= v.true_occupancy
        return v


@dataclass
class SimClock:
    step: int = 0
    dt: float = 1.0
    control_interval: float = 10.0

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        ratio = self.control_interval / self.dt
        if ratio < 1 or abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("control_interval must be a positive integer multiple of dt")

    @property
    def interval_steps(self) -> int:
        return int(round(self.control_interval / self.dt))

    @property
    def time(self) -> float:
        return self.step * self.dt

    def is_control_step(self) -> bool:
        return self.step % self.interval_steps == 0


def service_quota(
    saturation_flow: float,
    dt: float,
    carryover: float,
    rng: np.random.Generator | None = None,
    noise: float = 0.0,
) -> tuple[int, float]:
    """Whole vehicles a served movement may release this step.

    ``saturation_flow`` is in veh/h. The fractional remainder is returned as
    the new carryover so that the long-run release rate equals the saturation
    flow. With ``noise > 0`` the accrual is scaled by a factor drawn
    uniformly from ``[1 - noise, 1 + noise]``.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    accrual = saturation_flow / 3600.0 * dt
    if noise > 0.0 and rng is not None:
        accrual *= rng.uniform(1.0 - noise, 1.0 + noise)
    total = carryover + accrual
    quota = math.floor(total + 1e-9)
    return quota, max(total - quota, 0.0)


def assign_to_movement(network: NetworkGraph, vehicle: Vehicle, link: int) -> int:
    """Movement a vehicle joins at the end of ``link``: (link, next route link)."""
    route = vehicle.route
    try:
        pos = route.index(link, vehicle.route_position)
    except ValueError:
        raise RouteError(f"link {link} is not on the remaining route of vehicle {vehicle.id}") from None
    if pos + 1 >= len(route):
        raise RouteError(f"link {link} is the last link of vehicle {vehicle.id}")
    mid = network.movement_between(link, route[pos + 1])
    if mid is None:
        raise RouteError(f"vehicle {vehicle.id}: links {link} and {route[pos + 1]} are not adjacent")
    return mid


def allocate_storage(quotas: Sequence[int], desired: Sequence[int], available: int) -> list[int]:
    """Split ``available`` downstream spaces among competing movements.

    Shares are proportional to the discharge quotas, rounded by largest
    remainder (ties to the lower index), capped at each movement's desired
    discharge; capacity freed by a cap is redistributed.
    """
    n = len(quotas)
    grant = [0] * n
    open_ = [i for i in range(n) if desired[i] > 0]
    left = max(int(available), 0)
    while left > 0 and open_:
        qs = sum(quotas[i] for i in open_)
        raw = [left * (quotas[i] / qs if qs else 1 / len(open_)) for i in open_]
        base = [math.floor(r) for r in raw]
        rem = left - sum(base)
        order = sorted(range(len(open_)), key=lambda k: (-(raw[k] - base[k]), open_[k]))
        for k in order[:rem]:
            base[k] += 1
        still = []
        for k, i in enumerate(open_):
            take = min(base[k], desired[i] - grant[i])
            grant[i] += take
            left -= take
            if grant[i] < desired[i]:
                still.append(i)
        if len(still) == len(open_):
            break
        open_ = still
    return grant


@dataclass
class _Topology:
    """Per-network arrays precomputed for the inner loop."""

    storage: list[float]
    is_sink: list[bool]
    travel_steps: list[int]
    downstream: list[int]
    upstream: list[int]
    quota_rate: list[float]
    phase_movements: list[list[tuple[int, ...]]]
    phase_shared: list[list[bool]]
    sources: list[int]


def _topology(network: NetworkGraph, dt: float) -> _Topology:
    phase_movements = []
    phase_shared = []
    for node in network.intersections:
        pm = [p.served_movements for p in node.phases]
        phase_movements.append(pm)
        shared = []
        for ms in pm:
            downs = [network.movements[m].downstream for m in ms]
            shared.append(len(set(downs)) != len(downs))
        phase_shared.append(shared)
    return _Topology(
        storage=[l.storage_capacity for l in network.links],
        is_sink=[l.is_sink for l in network.links],
        travel_steps=[max(1, math.ceil(l.free_flow_time / dt - 1e-9)) for l in network.links],
        downstream=[m.downstream for m in network.movements],
        upstream=[m.upstream for m in network.movements],
        quota_rate=[m.saturation_flow for m in network.movements],
        phase_movements=phase_movements,
        phase_shared=phase_shared,
        sources=[l.id for l in network.links if l.is_source],
    )


class TrafficState:
    """Full mutable state of one simulation run.

    ``signals`` passed to :meth:`advance_step` hold the phase index per
    intersection; ``lost_time`` seconds of no service follow every switch.
    ``on_cross`` is called for each vehicle crossing a stop line, before it
    enters the next link (the APC error model hooks in here).
    """

    def __init__(
        self,
        network: NetworkGraph,
        dt: float = 1.0,
        lost_time: float = 0.0,
        saturation_noise: float = 0.0,
        on_cross: Callable[[Vehicle], None] | None = None,
    ) -> None:
        self.network = network
        self.dt = dt
        self.topo = _topology(network, dt)
        self.step = 0
        self.count = [0] * len(network.links)
        self.pending: dict[int, list[tuple[int, Vehicle]]] = {}
        self.entry_queues: dict[int, deque[Vehicle]] = {s: deque() for s in self.topo.sources}
        self.movement_states = [MovementState(m.id) for m in network.movements]
        self.active = [n.active_phase for n in network.intersections]
        self.switch_step = [-(10**9)] * len(network.intersections)
        self.lost_steps = int(math.ceil(lost_time / dt - 1e-9)) if lost_time > 0 else 0
        self.saturation_noise = saturation_noise
        self.on_cross = on_cross
        self.entered = 0
        self.exited = 0
        self.exited_vehicles: list[Vehicle] = []

    # ------------------------------------------------------------------

    @property
    def time(self) -> float:
        return self.step * self.dt

    def set_signals(self, signals: Sequence[int]) -> None:
        for i, ph in enumerate(signals):
            if ph != self.active[i]:
                if not 0 <= ph < len(self.topo.phase_movements[i]):
                    raise ValueError(f"intersection {i}: invalid phase {ph}")
                self.active[i] = ph
                self.switch_step[i] = self.step

    def queue_lengths(self) -> list[int]:
        return [len(ms.queue) for ms in self.movement_states]

    def in_network(self) -> int:
        """Census: vehicles on links plus blocked entries."""
        topo = self.topo
        on_links = sum(c for c, sink in zip(self.count, topo.is_sink) if not sink)
        return on_links + sum(len(q) for q in self.entry_queues.values())

    def check_invariants(self) -> None:
        census = self.in_network()
        if self.entered != census + self.exited:
            raise InvariantViolation(
                f"step {self.step}: entered {self.entered} != in-network {census} + exited {self.exited}"
            )
        for lid, (c, cap) in enumerate(zip(self.count, self.topo.storage)):
            if c < 0 or c > cap:
                raise InvariantViolation(f"step {self.step}: link {lid} holds {c} vehicles (storage {cap})")
        for ms in self.movement_states:
            if ms.occupancy_sum < len(ms.queue):
                raise InvariantViolation(f"movement {ms.movement}: occupancy below vehicle count")

    # ------------------------------------------------------------------

    def advance_step(
        self,
        signals: Sequence[int] | None = None,
        arrivals: Iterable[Vehicle] = (),
        rng: np.random.Generator | None = None,
    ) -> list[Vehicle]:
        """Advance one step and return the vehicles discharged during it.

        Vehicles discharged onto a sink get ``exit_time`` set to the end of
        the step. ``rng`` is only used when saturation noise is enabled.
        """
        if signals is not None:
            self.set_signals(signals)
        topo = self.topo
        network = self.network
        step = self.step
        t_end = (step + 1) * self.dt
        count = self.count
        mstates = self.movement_states
        pending = self.pending

        # 1. free-flow traversals completing now join their movement queue
        for lnk, v in pending.pop(step, ()):
            mstates[assign_to_movement(network, v, lnk)].push(v)

        # 2. discharge of served movements
        start = count[:]
        storage = topo.storage
        is_sink = topo.is_sink
        travel = topo.travel_steps
        downstream = topo.downstream
        noise = self.saturation_noise
        discharged: list[Vehicle] = []
        for node_id, ph in enumerate(self.active):
            if self.lost_steps and step - self.switch_step[node_id] < self.lost_steps:
                continue
            movs = topo.phase_movements[node_id][ph]
            quotas = []
            desired = []
            for mid in movs:
                ms = mstates[mid]
                q, ms.carry = service_quota(topo.quota_rate[mid], self.dt, ms.carry, rng, noise)
                quotas.append(q)
                desired.append(min(q, len(ms.queue)))
            if topo.phase_shared[node_id][ph]:
                grants = [0] * len(movs)
                groups: dict[int, list[int]] = {}
                for k, mid in enumerate(movs):
                    groups.setdefault(downstream[mid], []).append(k)
                for dn, ks in groups.items():
                    if is_sink[dn]:
                        for k in ks:
                            grants[k] = desired[k]
                        continue
                    avail = storage[dn] - start[dn]
                    sub = allocate_storage([quotas[k] for k in ks], [desired[k] for k in ks], avail)
                    for k, g in zip(ks, sub):
                        grants[k] = g
            else:
                grants = []
                for k, mid in enumerate(movs):
                    dn = downstream[mid]
                    n = desired[k]
                    if n and not is_sink[dn]:
                        room = storage[dn] - start[dn]
                        if room < n:
                            n = max(0, int(room))
                    grants.append(n)
            for mid, n in zip(movs, grants):
                if not n:
                    continue
                ms = mstates[mid]
                lnk = topo.upstream[mid]
                dn = downstream[mid]
                for _ in range(n):
                    v = ms.pop()
                    count[lnk] -= 1
                    v.route_position += 1
                    if self.on_cross is not None:
                        self.on_cross(v)
                    if is_sink[dn]:
                        v.exit_time = t_end
                        self.exited += 1
                        self.exited_vehicles.append(v)
                    else:
                        count[dn] += 1
                        v.link_arrival_time = t_end
                        pending.setdefault(step + travel[dn], []).append((dn, v))
                    discharged.append(v)

        # 3. new arrivals; admission limited by storage seen at step start
        for v in arrivals:
            src = v.route[0]
            if src not in self.entry_queues:
                raise RouteError(f"vehicle {v.id} does not start on a source link")
            self.entry_queues[src].append(v)
            self.entered += 1
        for src, q in self.entry_queues.items():
            if not q:
                continue
            room = storage[src] - start[src]
            while q and room > 0:
                v = q.popleft()
                room -= 1
                count[src] += 1
                v.link_arrival_time = step * self.dt
                pending.setdefault(step + travel[src], []).append((src, v))

        self.step = step + 1
        return discharged

    # ------------------------------------------------------------------

    def dump_header(self) -> list[str]:
        net = self.network
        return (["step"] + [f"x_{m.id}" for m in net.movements]
                + [f"n_{l.id}" for l in net.links if not l.is_sink]
                + ["entry_queue"])

    def dump_row(self) -> list:
        net = self.network
        return ([self.step] + self.queue_lengths()
                + [self.count[l.id] for l in net.links if not l.is_sink]
                + [sum(len(q) for q in self.entry_queues.values())])


class StateDump:
    """Per-step CSV writer: step, queue per movement, vehicles per link, blocked entries."""

    def __init__(self, stream: TextIO, state: TrafficState) -> None:
        self.writer = csv.writer(stream, lineterminator="\n")
        self.state = state
        self.writer.writerow(state.dump_header())

    def write(self) -> None:
        self.writer.writerow(self.state.dump_row())
