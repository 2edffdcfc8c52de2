"""Controller-visible observations derived from the ground-truth state.

Information regimes:

* ``exact``: connected vehicles report their true occupancy.
* ``fixed_average``: connected private vehicles count as a fixed number of
  persons each; buses report their APC count.
* partial penetration: only connected vehicles are counted at all. The
  connected flag is drawn once per vehicle at creation.

APC error on buses accumulates: at every stop-line crossing a zero-mean
normal error with standard deviation ``sigma`` times the true occupancy is
added to the bus's running error, and the reported value is the true
occupancy plus that error, floored at zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .controllers import Observation
from .dynamics import TrafficState, Vehicle
from .network import ConfigurationError, Intersection

__all__ = ["SensingConfig", "observe", "ground_truth_observation", "apc_perturb", "ApcErrorModel"]


@dataclass(frozen=True)
class SensingConfig:
    private_occupancy_mode: str = "exact"  # or "fixed_average"
    fixed_average: float = 1.5
    apc_sigma: float = 0.0  # fraction, 0.4 means 40 %
    cv_penetration: float = 1.0
    buses_always_connected: bool = True

    def __post_init__(self) -> None:
        if self.private_occupancy_mode not in ("exact", "fixed_average"):
            raise ConfigurationError(f"unknown private_occupancy_mode {self.private_occupancy_mode!r}")
        if not 0.0 < self.cv_penetration <= 1.0:
            raise ConfigurationError("cv_penetration must lie in (0, 1]")
        if self.apc_sigma < 0:
            raise ConfigurationError("apc_sigma must be >= 0")
        if not self.fixed_average > 0:
            raise ConfigurationError("fixed_average must be > 0")

    @classmethod
    def from_percent(cls, sigma_percent: float, **kw) -> "SensingConfig":
        return cls(apc_sigma=sigma_percent / 100.0, **kw)


def observe(
    state: TrafficState,
    intersection: Intersection,
    config: SensingConfig,
    turn_ratios,
    rng: np.random.Generator | None = None,
) -> Observation:
    """Observation for one intersection built from the connected vehicles only.

    ``turn_ratios[mid]`` is the controller's estimate r(l,m) for movement
    ``mid``. The state is not modified; ``rng`` is accepted for interface
    symmetry (connectivity is fixed at vehicle creation).
    """
    net = state.network
    ms = state.movement_states
    fixed = config.private_occupancy_mode == "fixed_average"
    avg = config.fixed_average
    queue = {}
    occ = {}
    buses = {}
    downstream = {}
    for mid in intersection.movement_ids:
        s = ms[mid]
        queue[mid] = s.cv_count
        private = s.cv_private_count * avg if fixed else s.cv_private_occ
        occ[mid] = private + s.cv_bus_reported
        buses[mid] = s.cv_bus_count
        dn = net.movements[mid].downstream
        downstream[mid] = tuple((ms[n].cv_count, turn_ratios[n]) for n in net.movements_from(dn))
    return Observation(queue, occ, buses, downstream, intersection.is_isolated)


def ground_truth_observation(state: TrafficState, intersection: Intersection, turn_ratios) -> Observation:
    """Full-information observation computed by walking the queues."""
    net = state.network
    ms = state.movement_states
    queue = {}
    occ = {}
    buses = {}
    downstream = {}
    for mid in intersection.movement_ids:
        q = ms[mid].queue
        queue[mid] = len(q)
        occ[mid] = sum(v.reported_occupancy if v.kind == "bus" else v.true_occupancy for v in q)
        buses[mid] = sum(1 for v in q if v.kind == "bus")
        dn = net.movements[mid].downstream
        downstream[mid] = tuple((len(ms[n].queue), turn_ratios[n]) for n in net.movements_from(dn))
    return Observation(queue, occ, buses, downstream, intersection.is_isolated)


def apc_perturb(bus: Vehicle, config: SensingConfig, rng: np.random.Generator) -> float:
    """Add one crossing's APC error to ``bus`` and return the new reported occupancy."""
    if config.apc_sigma > 0:
        bus.apc_error += rng.normal(0.0, config.apc_sigma * bus.true_occupancy)
    bus.reported_occupancy = max(0.0, bus.true_occupancy + bus.apc_error)
    return bus.reported_occupancy


class ApcErrorModel:
    """Stop-line hook applying :func:`apc_perturb` with one random stream per bus."""

    def __init__(self, config: SensingConfig, seed_sequence: np.random.SeedSequence) -> None:
        self.config = config
        self.root = seed_sequence
        self._streams: dict[int, np.random.Generator] = {}

    def stream(self, bus: Vehicle) -> np.random.Generator:
        g = self._streams.get(bus.id)
        if g is None:
            ss = np.random.SeedSequence(self.root.entropy, spawn_key=self.root.spawn_key + (bus.id,))
            g = self._streams[bus.id] = np.random.default_rng(ss)
        return g

    def __call__(self, v: Vehicle) -> None:
        if v.kind == "bus" and self.config.apc_sigma > 0:
            apc_perturb(v, self.config, self.stream(v))
