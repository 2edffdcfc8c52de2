"""Decentralized max-pressure signal controllers.

All three policies follow the same three steps at every control boundary:
weigh each movement from local observations, sum weight times saturation
flow over the movements of each phase, and activate the phase with the
largest pressure.  They differ only in the weight:

* Q-MP:   ``x(l,m) - sum_n x(m,n) r(m,n)``  (optionally clipped at 0)
* OCC-MP: average upstream occupancy times the clipped Q-MP weight
* RB-MP:  the unclipped Q-MP weight plus a large constant ``M`` on every
  movement with at least one detected bus

Observations are keyed by arbitrary hashable movement ids, so the
functions here work on hand-built examples as well as on simulator state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Hashable, Mapping, Sequence

__all__ = [
    "Observation",
    "PhaseDecision",
    "qmp_weight",
    "occmp_weight",
    "rbmp_weight",
    "pressure",
    "argmax_phase",
    "select_phase_qmp",
    "select_phase_occmp",
    "select_phase_rbmp",
    "QMP",
    "OCCMP",
    "RBMP",
    "make_controller",
    "TIE_RTOL",
]

MovementKey = Hashable

# pressures within this relative distance of the maximum count as tied
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class Observation:
    """What one intersection's controller sees at a control boundary.

    ``downstream[mid]`` lists ``(x(m,n), r(m,n))`` for every movement
    ``(m,n)`` leaving the downstream link of ``mid``; it is empty (or
    absent) when that link is a sink.
    """

    queue: Mapping[MovementKey, float]
    occupancy_sum: Mapping[MovementKey, float] = field(default_factory=dict)
    bus_count: Mapping[MovementKey, int] = field(default_factory=dict)
    downstream: Mapping[MovementKey, Sequence[tuple[float, float]]] = field(default_factory=dict)
    is_isolated: bool = False

    def average_occupancy(self, mid: MovementKey) -> float:
        x = self.queue.get(mid, 0)
        if x <= 0:
            return 0.0
        return self.occupancy_sum.get(mid, 0.0) / x


@dataclass(frozen=True)
class PhaseDecision:
    phase: int
    pressures: tuple[float, ...]


def qmp_weight(obs: Observation, movement: MovementKey, clip: bool = False) -> float:
    x = obs.queue[movement]
    if obs.is_isolated:
        w = float(x)
    else:
        w = x - sum(xd * r for xd, r in obs.downstream.get(movement, ()))
    if clip and w < 0.0:
        return 0.0
    return w


def occmp_weight(obs: Observation, movement: MovementKey) -> float:
    wq = qmp_weight(obs, movement, clip=True)
    if wq == 0.0:
        return 0.0
    return obs.average_occupancy(movement) * wq


def rbmp_weight(obs: Observation, movement: MovementKey, big_m: float = 1e6) -> float:
    w = qmp_weight(obs, movement, clip=False)
    if obs.bus_count.get(movement, 0) > 0:
        w += big_m
    return w


def pressure(
    weights: Mapping[MovementKey, float],
    phase: Sequence[MovementKey],
    saturation: Mapping[MovementKey, float],
) -> float:
    """Sum of weight times saturation flow over the movements a phase serves."""
    served = getattr(phase, "served_movements", phase)
    return sum(weights[m] * saturation[m] for m in served)


def argmax_phase(pressures: Sequence[float], current: int | None = None) -> int:
    """Index of the largest pressure; ties keep ``current``, else the lowest index."""
    best = max(pressures)
    tol = TIE_RTOL * max(1.0, abs(best))
    tied = [k for k, p in enumerate(pressures) if p >= best - tol]
    if current is not None and current in tied:
        return current
    return tied[0]


def _select(
    weight: Callable[[MovementKey], float],
    phases: Sequence[Sequence[MovementKey]],
    saturation: Mapping[MovementKey, float],
    current: int | None,
) -> PhaseDecision:
    weights: dict[MovementKey, float] = {}
    for phase in phases:
        for m in getattr(phase, "served_movements", phase):
            if m not in weights:
                weights[m] = weight(m)
    pressures = tuple(pressure(weights, ph, saturation) for ph in phases)
    return PhaseDecision(argmax_phase(pressures, current), pressures)


def select_phase_qmp(obs, phases, saturation, current=None, clip=False) -> PhaseDecision:
    return _select(lambda m: qmp_weight(obs, m, clip), phases, saturation, current)


def select_phase_occmp(obs, phases, saturation, current=None) -> PhaseDecision:
    return _select(lambda m: occmp_weight(obs, m), phases, saturation, current)


def select_phase_rbmp(obs, phases, saturation, current=None, big_m: float = 1e6) -> PhaseDecision:
    return _select(lambda m: rbmp_weight(obs, m, big_m), phases, saturation, current)


# Controller objects: parameters only, the current phase lives in the simulation.


@dataclass(frozen=True)
class QMP:
    clip: bool = False
    name: str = "qmp"

    def decide(self, obs, phases, saturation, current=None) -> PhaseDecision:
        return select_phase_qmp(obs, phases, saturation, current, clip=self.clip)


@dataclass(frozen=True)
class OCCMP:
    name: str = "occmp"

    def decide(self, obs, phases, saturation, current=None) -> PhaseDecision:
        return select_phase_occmp(obs, phases, saturation, current)


@dataclass(frozen=True)
class RBMP:
    big_m: float = 1e6
    name: str = "rbmp"

    def decide(self, obs, phases, saturation, current=None) -> PhaseDecision:
        return select_phase_rbmp(obs, phases, saturation, current, big_m=self.big_m)


def make_controller(name: str, **params):
    """Controller from its id: ``qmp``, ``occmp`` or ``rbmp``."""
    key = name.lower().replace("-", "").replace("_", "")
    if key == "qmp":
        return QMP(clip=bool(params.get("clip", False)))
    if key == "occmp":
        return OCCMP()
    if key == "rbmp":
        return RBMP(big_m=float(params.get("big_m", 1e6)))
    raise ValueError(f"unknown controller {name!r}")
