"""Static road-network representation and the parametric grid builder.

A network is a set of directed links joined at signalized intersections.
Each intersection owns a set of movements (upstream link -> downstream
link) and an ordered list of phases; every movement is served by exactly
one phase.  Perimeter approaches carry a source link (entry) and a sink
link (exit) that together form an origin/destination centroid.

The grid builder uses a four-phase scheme with dedicated left, through and
right lanes per approach::

    phase 0  north/south through + right
    phase 1  north/south left
    phase 2  east/west through + right
    phase 3  east/west left

Right turns are protected together with the through movement, so there is
no right-turn-on-red.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

__all__ = [
    "ConfigurationError",
    "Link",
    "Movement",
    "Phase",
    "Intersection",
    "Centroid",
    "LinkTemplate",
    "NetworkGraph",
    "build_grid",
    "storage_capacity_of",
    "HEADINGS",
    "FOUR_PHASE",
]


class ConfigurationError(ValueError):
    """Raised for invalid network, demand or scenario configuration."""


# unit step (drow, dcol) per heading; row 0 is the northern edge
HEADINGS: dict[str, tuple[int, int]] = {
    "N": (-1, 0),
    "E": (0, 1),
    "S": (1, 0),
    "W": (0, -1),
}
_RIGHT_OF = {"N": "E", "E": "S", "S": "W", "W": "N"}
_LEFT_OF = {v: k for k, v in _RIGHT_OF.items()}

# (headings of arriving traffic, turns served) per phase
FOUR_PHASE: tuple[tuple[frozenset[str], frozenset[str]], ...] = (
    (frozenset("NS"), frozenset("TR")),
    (frozenset("NS"), frozenset("L")),
    (frozenset("EW"), frozenset("TR")),
    (frozenset("EW"), frozenset("L")),
)


@dataclass(frozen=True)
class Link:
    id: int
    name: str
    length: float  # m
    lanes: int
    free_flow_speed: float  # km/h
    storage_capacity: float  # vehicles; math.inf for sinks
    is_source: bool = False
    is_sink: bool = False
    from_node: int | None = None  # intersection id, None for a centroid
    to_node: int | None = None
    heading: str = ""

    def __post_init__(self) -> None:
        if not self.length > 0:
            raise ConfigurationError(f"link {self.name}: length must be > 0")
        if self.lanes < 1:
            raise ConfigurationError(f"link {self.name}: lanes must be >= 1")
        if not self.free_flow_speed > 0:
            raise ConfigurationError(f"link {self.name}: free_flow_speed must be > 0")
        if not self.storage_capacity >= 1:
            raise ConfigurationError(f"link {self.name}: storage_capacity must be >= 1")

    @property
    def free_flow_time(self) -> float:
        """Traversal time at free-flow speed, in seconds."""
        return self.length / (self.free_flow_speed / 3.6)


@dataclass(frozen=True)
class Movement:
    id: int
    upstream: int
    downstream: int
    saturation_flow: float  # veh/h
    turn_ratio: float
    intersection: int
    turn: str  # "L", "T" or "R"

    def __post_init__(self) -> None:
        if not self.saturation_flow > 0:
            raise ConfigurationError(f"movement {self.id}: saturation_flow must be > 0")
        if not 0.0 <= self.turn_ratio <= 1.0:
            raise ConfigurationError(f"movement {self.id}: turn_ratio outside [0, 1]")


@dataclass(frozen=True)
class Phase:
    id: int
    served_movements: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.served_movements:
            raise ConfigurationError(f"phase {self.id} serves no movement")

    def activation(self, movement: int) -> int:
        """Binary indicator S(l,m) for this phase."""
        return int(movement in self.served_movements)


@dataclass(frozen=True)
class Intersection:
    id: int
    name: str
    incoming_links: tuple[int, ...]
    outgoing_links: tuple[int, ...]
    phases: tuple[Phase, ...]
    active_phase: int = 0
    is_isolated: bool = False
    row: int = 0
    col: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.active_phase < len(self.phases):
            raise ConfigurationError(f"intersection {self.name}: invalid active_phase")

    @property
    def movement_ids(self) -> tuple[int, ...]:
        return tuple(m for p in self.phases for m in p.served_movements)


@dataclass(frozen=True)
class Centroid:
    """Perimeter origin/destination: one entering and one exiting link."""

    name: str
    source_link: int
    sink_link: int
    side: str  # N, E, S or W edge of the grid


@dataclass(frozen=True)
class LinkTemplate:
    length: float = 200.0
    lanes: int = 3
    free_flow_speed: float = 50.0
    saturation_flow: float = 1800.0
    jam_spacing: float = 7.0

    def validate(self) -> None:
        for name in ("length", "free_flow_speed", "saturation_flow", "jam_spacing"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"link template: {name} must be > 0")
        if self.lanes < 1:
            raise ConfigurationError("link template: lanes must be >= 1")


def storage_capacity_of(link: Link | LinkTemplate, jam_spacing: float) -> int:
    """Number of vehicles a link holds at jam density.

    >>> storage_capacity_of(LinkTemplate(length=200, lanes=3), 7.0)
    85
    """
    if not jam_spacing > 0:
        raise ConfigurationError("jam_spacing must be > 0")
    return max(1, math.floor(link.length * link.lanes / jam_spacing))


@dataclass(frozen=True)
class NetworkGraph:
    links: tuple[Link, ...]
    movements: tuple[Movement, ...]
    intersections: tuple[Intersection, ...]
    centroids: tuple[Centroid, ...] = ()
    rows: int = 0
    cols: int = 0
    _by_pair: dict[tuple[int, int], int] = field(default_factory=dict, compare=False, repr=False)
    _out: dict[int, tuple[int, ...]] = field(default_factory=dict, compare=False, repr=False)
    _phase_of: dict[int, int] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        by_pair = {(m.upstream, m.downstream): m.id for m in self.movements}
        out: dict[int, list[int]] = {}
        for m in self.movements:
            out.setdefault(m.upstream, []).append(m.id)
        phase_of = {}
        for node in self.intersections:
            for p in node.phases:
                for mid in p.served_movements:
                    phase_of[mid] = p.id
        self._by_pair.update(by_pair)
        self._out.update({k: tuple(v) for k, v in out.items()})
        self._phase_of.update(phase_of)
        self.validate()

    # lookups ---------------------------------------------------------------

    def movement_between(self, upstream: int, downstream: int) -> int | None:
        return self._by_pair.get((upstream, downstream))

    def movements_from(self, link: int) -> tuple[int, ...]:
        """Movements whose upstream link is ``link`` (the set D(l) as movements)."""
        return self._out.get(link, ())

    def downstream_links(self, link: int) -> tuple[int, ...]:
        return tuple(self.movements[m].downstream for m in self.movements_from(link))

    def phase_of(self, movement: int) -> int:
        return self._phase_of[movement]

    def centroid(self, name: str) -> Centroid:
        for c in self.centroids:
            if c.name == name:
                return c
        raise KeyError(name)

    def link_by_name(self, name: str) -> Link:
        for link in self.links:
            if link.name == name:
                return link
        raise KeyError(name)

    def intersection_at(self, row: int, col: int) -> Intersection:
        return self.intersections[row * self.cols + col]

    # invariants ------------------------------------------------------------

    def validate(self) -> None:
        for i, link in enumerate(self.links):
            if link.id != i:
                raise ConfigurationError("link ids must be contiguous from 0")
        for i, m in enumerate(self.movements):
            if m.id != i:
                raise ConfigurationError("movement ids must be contiguous from 0")
        for link in self.links:
            if link.is_sink:
                continue
            outs = self.movements_from(link.id)
            if not outs:
                raise ConfigurationError(f"link {link.name} has no downstream movement")
            total = sum(self.movements[m].turn_ratio for m in outs)
            if abs(total - 1.0) > 1e-9:
                raise ConfigurationError(f"turn ratios out of link {link.name} sum to {total}")
        for node in self.intersections:
            served = [m for p in node.phases for m in p.served_movements]
            if len(served) != len(set(served)):
                raise ConfigurationError(f"intersection {node.name}: movement in two phases")
            expected = {m for link in node.incoming_links for m in self.movements_from(link)}
            if set(served) != expected:
                raise ConfigurationError(f"intersection {node.name}: phases do not cover movements")
            for p in node.phases:
                ms = p.served_movements
                for i, a in enumerate(ms):
                    for b in ms[i + 1:]:
                        if self.conflicting(a, b):
                            raise ConfigurationError(
                                f"intersection {node.name}: phase {p.id} serves conflicting movements {a}, {b}"
                            )

    def conflicting(self, a: int, b: int) -> bool:
        """Conflict table for right-hand traffic at a four-leg intersection.

        Movements without heading information never conflict.
        """
        ma, mb = self.movements[a], self.movements[b]
        ha, hb = self.links[ma.upstream].heading, self.links[mb.upstream].heading
        if not ha or not hb or ha == hb:
            return False
        if ma.downstream == mb.downstream:
            return True
        if _RIGHT_OF[_RIGHT_OF[ha]] == hb:  # opposing approaches
            return (ma.turn == "L") != (mb.turn == "L")
        return not (ma.turn == "R" or mb.turn == "R")

    # serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        def num(x: float):
            return "inf" if math.isinf(x) else x

        return {
            "rows": self.rows,
            "cols": self.cols,
            "links": [
                {
                    "id": l.id,
                    "name": l.name,
                    "length": l.length,
                    "lanes": l.lanes,
                    "free_flow_speed": l.free_flow_speed,
                    "storage_capacity": num(l.storage_capacity),
                    "is_source": l.is_source,
                    "is_sink": l.is_sink,
                    "from_node": l.from_node,
                    "to_node": l.to_node,
                    "heading": l.heading,
                }
                for l in self.links
            ],
            "movements": [
                {
                    "id": m.id,
                    "upstream": m.upstream,
                    "downstream": m.downstream,
                    "saturation_flow": m.saturation_flow,
                    "turn_ratio": m.turn_ratio,
                    "intersection": m.intersection,
                    "turn": m.turn,
                }
                for m in self.movements
            ],
            "intersections": [
                {
                    "id": n.id,
                    "name": n.name,
                    "row": n.row,
                    "col": n.col,
                    "incoming_links": list(n.incoming_links),
                    "outgoing_links": list(n.outgoing_links),
                    "phases": [list(p.served_movements) for p in n.phases],
                    "active_phase": n.active_phase,
                    "is_isolated": n.is_isolated,
                }
                for n in self.intersections
            ],
            "centroids": [
                {"name": c.name, "source_link": c.source_link, "sink_link": c.sink_link, "side": c.side}
                for c in self.centroids
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "NetworkGraph":
        def num(x) -> float:
            return math.inf if x == "inf" else float(x)

        links = tuple(
            Link(
                id=d["id"],
                name=d["name"],
                length=float(d["length"]),
                lanes=int(d["lanes"]),
                free_flow_speed=float(d["free_flow_speed"]),
                storage_capacity=num(d["storage_capacity"]),
                is_source=bool(d["is_source"]),
                is_sink=bool(d["is_sink"]),
                from_node=d.get("from_node"),
                to_node=d.get("to_node"),
                heading=d.get("heading", ""),
            )
            for d in data["links"]
        )
        movements = tuple(
            Movement(
                id=d["id"],
                upstream=d["upstream"],
                downstream=d["downstream"],
                saturation_flow=float(d["saturation_flow"]),
                turn_ratio=float(d["turn_ratio"]),
                intersection=d["intersection"],
                turn=d["turn"],
            )
            for d in data["movements"]
        )
        nodes = tuple(
            Intersection(
                id=d["id"],
                name=d["name"],
                incoming_links=tuple(d["incoming_links"]),
                outgoing_links=tuple(d["outgoing_links"]),
                phases=tuple(Phase(i, tuple(p)) for i, p in enumerate(d["phases"])),
                active_phase=d.get("active_phase", 0),
                is_isolated=d.get("is_isolated", False),
                row=d.get("row", 0),
                col=d.get("col", 0),
            )
            for d in data["intersections"]
        )
        centroids = tuple(Centroid(**c) for c in data.get("centroids", ()))
        return cls(links, movements, nodes, centroids, data.get("rows", 0), data.get("cols", 0))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "NetworkGraph":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _turn(heading_in: str, heading_out: str) -> str | None:
    if heading_out == heading_in:
        return "T"
    if heading_out == _RIGHT_OF[heading_in]:
        return "R"
    if heading_out == _LEFT_OF[heading_in]:
        return "L"
    return None  # U-turn


def build_grid(
    rows: int,
    cols: int,
    link_spec: LinkTemplate | None = None,
    phase_scheme: str = "four_phase",
    unbounded_sources: bool = False,
) -> NetworkGraph:
    """Build a bidirectional ``rows`` x ``cols`` grid of signalized intersections.

    Every perimeter approach gets a centroid made of a source link feeding
    the boundary intersection and a sink link leaving it. Identifiers are
    assigned in a fixed order, so identical arguments give identical graphs.

    ``unbounded_sources`` lifts the storage limit on entry links; stability
    trials use it so that queues are measured without entry blocking.
    """
    if rows < 1 or cols < 1:
        raise ConfigurationError("grid needs rows >= 1 and cols >= 1")
    spec = link_spec or LinkTemplate()
    spec.validate()
    if phase_scheme not in ("four_phase", "four-phase"):
        raise ConfigurationError(f"unknown phase scheme {phase_scheme!r}")

    storage = storage_capacity_of(spec, spec.jam_spacing)
    links: list[Link] = []
    centroids: list[Centroid] = []

    def add_link(name, heading, frm, to, *, source=False, sink=False) -> int:
        cap = math.inf if sink or (source and unbounded_sources) else storage
        lid = len(links)
        links.append(
            Link(lid, name, spec.length, spec.lanes, spec.free_flow_speed, cap,
                 is_source=source, is_sink=sink, from_node=frm, to_node=to, heading=heading)
        )
        return lid

    def node_id(r: int, c: int) -> int:
        return r * cols + c

    def node_name(r: int, c: int) -> str:
        return f"r{r}c{c}"

    # internal links, then perimeter centroids
    for r in range(rows):
        for c in range(cols):
            for h, (dr, dc) in HEADINGS.items():
                r2, c2 = r + dr, c + dc
                if 0 <= r2 < rows and 0 <= c2 < cols:
                    add_link(f"{node_name(r, c)}>{node_name(r2, c2)}", h, node_id(r, c), node_id(r2, c2))
    perimeter = (
        [("N", 0, c, "S") for c in range(cols)]
        + [("S", rows - 1, c, "N") for c in range(cols)]
        + [("W", r, 0, "E") for r in range(rows)]
        + [("E", r, cols - 1, "W") for r in range(rows)]
    )
    for side, r, c, inward in perimeter:
        idx = c if side in "NS" else r
        name = f"{side}{idx}"
        outward = _RIGHT_OF[_RIGHT_OF[inward]]
        src = add_link(f"{name}>{node_name(r, c)}", inward, None, node_id(r, c), source=True)
        snk = add_link(f"{node_name(r, c)}>{name}", outward, node_id(r, c), None, sink=True)
        centroids.append(Centroid(name, src, snk, side))

    incoming: dict[int, list[int]] = {}
    outgoing: dict[int, list[int]] = {}
    for link in links:
        if link.to_node is not None:
            incoming.setdefault(link.to_node, []).append(link.id)
        if link.from_node is not None:
            outgoing.setdefault(link.from_node, []).append(link.id)

    movements: list[Movement] = []
    nodes: list[Intersection] = []
    for r in range(rows):
        for c in range(cols):
            nid = node_id(r, c)
            by_phase: list[list[int]] = [[] for _ in FOUR_PHASE]
            for lin in sorted(incoming[nid]):
                h_in = links[lin].heading
                outs = []
                for lout in sorted(outgoing[nid]):
                    turn = _turn(h_in, links[lout].heading)
                    if turn is not None:
                        outs.append((lout, turn))
                for lout, turn in outs:
                    mid = len(movements)
                    movements.append(
                        Movement(mid, lin, lout, spec.saturation_flow, 1.0 / len(outs), nid, turn)
                    )
                    for k, (hs, turns) in enumerate(FOUR_PHASE):
                        if h_in in hs and turn in turns:
                            by_phase[k].append(mid)
            phases = tuple(Phase(k, tuple(ms)) for k, ms in enumerate(by_phase))
            isolated = all(links[l].is_sink for l in outgoing[nid])
            nodes.append(
                Intersection(nid, node_name(r, c), tuple(sorted(incoming[nid])),
                             tuple(sorted(outgoing[nid])), phases, 0, isolated, r, c)
            )

    return NetworkGraph(tuple(links), tuple(movements), tuple(nodes), tuple(centroids), rows, cols)
