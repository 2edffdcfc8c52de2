"""Scenario configuration, seeded run generation, and sweep orchestration.

A master seed expands into named substreams (demand, routing, bus,
sensing, apc, saturation) so that varying one factor, such as APC error,
leaves the arrival pattern untouched.  The same generated trips are shared
by all controllers of a seed, which makes comparisons paired.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import __version__
from .controllers import make_controller
from .demand import (
    FULL_TOTALS,
    PEAK_MULTIPLIERS,
    PRIVATE_OCCUPANCY,
    BusRoute,
    OccupancyDistribution,
    RouteChoice,
    bus_route_path,
    desk_bus_routes,
    empirical_turn_ratios,
    full_bus_routes,
    generate_bus_trips,
    generate_private_arrivals,
    grid_demand_profile,
    scenario_matrix,
    seed_sequence,
    substream,
)
from .dynamics import InvariantViolation, StateDump, Vehicle
from .metrics import (
    RunMetrics,
    fmt,
    ledger_from_vehicles,
    mean_se,
    paired_percent_change,
    write_accumulation_csv,
    write_buckets_csv,
    write_runs_csv,
)
from .network import ConfigurationError, LinkTemplate, NetworkGraph, build_grid
from .sensing import ApcErrorModel, SensingConfig
from .simulation import DecisionLog, simulate

__all__ = [
    "PRESETS",
    "ControllerSpec",
    "ScenarioConfig",
    "RunInputs",
    "RunRecord",
    "load_config",
    "config_from_dict",
    "config_hash",
    "output_hash",
    "output_path",
    "matrix_sweep",
    "apc_sweep",
    "cv_sweep",
    "write_outputs",
    "prepare_inputs",
    "run_one",
    "run_scenario",
    "run_matrix",
    "run_apc_sweep",
    "run_cv_sweep",
]

# grid size, peak interval length (s), cooldown (s); totals scale with
# boundary entries and peak duration relative to the full 8x8, 2 h peak
PRESETS = {
    "desk": {"rows": 4, "cols": 4, "interval": 675.0, "cooldown": 900.0},
    "full": {"rows": 8, "cols": 8, "interval": 1800.0, "cooldown": 3600.0},
}
_FULL_ENTRIES = 32
_FULL_PEAK = 7200.0


@dataclass(frozen=True)
class ControllerSpec:
    name: str
    params: tuple[tuple[str, Any], ...] = ()

    def build(self):
        return make_controller(self.name, **dict(self.params))

    @property
    def label(self) -> str:
        return self.name.lower().replace("-", "").replace("_", "")


DEFAULT_CONTROLLERS = (ControllerSpec("qmp"), ControllerSpec("occmp"), ControllerSpec("rbmp"))


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "desk"
    preset: str = "desk"
    rows: int | None = None
    cols: int | None = None
    link: LinkTemplate = field(default_factory=LinkTemplate)
    sub_scenario: int | None = 1
    private_demand: str = "high"
    bus_passenger_demand: str = "high"
    bus_frequency: str = "high"
    demand_total: float | None = None
    interval_duration: float | None = None
    multipliers: tuple[float, ...] = PEAK_MULTIPLIERS
    cooldown: float | None = None
    ns_ew_ratio: float = 2.0
    occupancy: OccupancyDistribution = PRIVATE_OCCUPANCY
    buses: bool = True
    bus_routes: tuple[BusRoute, ...] | None = None
    controllers: tuple[ControllerSpec, ...] = DEFAULT_CONTROLLERS
    sensing: SensingConfig = field(default_factory=SensingConfig)
    route_k: int = 3
    route_theta: float = 0.05
    dt: float = 1.0
    control_interval: float = 10.0
    lost_time: float = 0.0
    saturation_noise: float = 0.0
    seeds: tuple[int, ...] = tuple(range(1, 11))
    output_dir: str = "results"
    workers: int = 1

    def __post_init__(self) -> None:
        if self.preset not in PRESETS:
            raise ConfigurationError(f"preset: unknown preset {self.preset!r}")
        for name in ("private_demand", "bus_passenger_demand", "bus_frequency"):
            if getattr(self, name) not in ("high", "low"):
                raise ConfigurationError(f"{name}: must be 'high' or 'low'")
        if self.sub_scenario is not None and not 1 <= self.sub_scenario <= 8:
            raise ConfigurationError("sub_scenario: must be 1..8")
        if not self.seeds:
            raise ConfigurationError("seeds: must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError("seeds: must be distinct")
        if not self.controllers:
            raise ConfigurationError("controllers: must be non-empty")
        for c in self.controllers:
            try:
                c.build()
            except (TypeError, ValueError) as exc:
                raise ConfigurationError(f"controllers: {exc}") from None
        if any(m < 0 for m in self.multipliers) or not self.multipliers:
            raise ConfigurationError("multipliers: must be non-empty and >= 0")
        if self.workers < 1:
            raise ConfigurationError("workers: must be >= 1")
        if self.route_k < 1:
            raise ConfigurationError("route_k: must be >= 1")
        if self.rows is not None and self.rows < 1 or self.cols is not None and self.cols < 1:
            raise ConfigurationError("rows/cols: must be >= 1")

    # resolved values ---------------------------------------------------

    @property
    def levels(self) -> tuple[str, str, str]:
        if self.sub_scenario is not None:
            s = scenario_matrix()[self.sub_scenario - 1]
            return s.private_demand, s.bus_passenger_demand, s.bus_frequency
        return self.private_demand, self.bus_passenger_demand, self.bus_frequency

    @property
    def grid(self) -> tuple[int, int]:
        p = PRESETS[self.preset]
        return self.rows or p["rows"], self.cols or p["cols"]

    @property
    def interval(self) -> float:
        return self.interval_duration if self.interval_duration is not None else PRESETS[self.preset]["interval"]

    @property
    def peak(self) -> float:
        return self.interval * len(self.multipliers)

    @property
    def horizon(self) -> float:
        cool = self.cooldown if self.cooldown is not None else PRESETS[self.preset]["cooldown"]
        return self.peak + cool

    @property
    def total_target(self) -> float:
        if self.demand_total is not None:
            return self.demand_total
        rows, cols = self.grid
        scale = (2 * (rows + cols)) / _FULL_ENTRIES * (self.peak / _FULL_PEAK)
        return FULL_TOTALS[self.levels[0]] * scale

    def resolved_bus_routes(self) -> tuple[BusRoute, ...]:
        if not self.buses:
            return ()
        if self.bus_routes is not None:
            return self.bus_routes
        _, pax, freq = self.levels
        maker = desk_bus_routes if self.preset == "desk" else full_bus_routes
        return tuple(maker(pax, freq))

    def network(self) -> NetworkGraph:
        rows, cols = self.grid
        return build_grid(rows, cols, self.link)

    def to_dict(self) -> dict:
        return _to_jsonable(self)


def _to_jsonable(obj):
    if isinstance(obj, float) and math.isinf(obj):
        return "inf"
    if hasattr(obj, "__dataclass_fields__"):
        return {f.name: _to_jsonable(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(x) for x in obj]
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    return obj


def config_hash(config: ScenarioConfig) -> str:
    """First 12 hex digits of the SHA-256 of the canonical JSON of ``config``.

    ``output_dir`` and ``workers`` do not change results and are excluded.
    """
    d = config.to_dict()
    d.pop("output_dir", None)
    d.pop("workers", None)
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


# ----------------------------------------------------------------------
# configuration parsing


def _expect(cond: bool, path: str, msg: str) -> None:
    if not cond:
        raise ConfigurationError(f"{path}: {msg}")


def _number(data: Mapping, key: str, path: str, kind=float):
    v = data[key]
    if isinstance(v, str) and v.strip().lower() in ("inf", "infinity"):
        v = math.inf
    _expect(isinstance(v, (int, float)) and not isinstance(v, bool), f"{path}{key}", f"expected a number, got {v!r}")
    if kind is int:
        _expect(float(v).is_integer(), f"{path}{key}", "expected an integer")
        return int(v)
    return float(v)


_SCALARS = {
    "name": str, "preset": str, "rows": int, "cols": int, "sub_scenario": int,
    "private_demand": str, "bus_passenger_demand": str, "bus_frequency": str,
    "demand_total": float, "interval_duration": float, "cooldown": float, "ns_ew_ratio": float,
    "buses": bool, "route_k": int, "route_theta": float, "dt": float, "control_interval": float,
    "lost_time": float, "saturation_noise": float, "output_dir": str, "workers": int,
}


def config_from_dict(data: Mapping) -> ScenarioConfig:
    """Build a :class:`ScenarioConfig`; errors name the offending field path."""
    _expect(isinstance(data, Mapping), "<root>", "expected a mapping")
    known = {f.name for f in fields(ScenarioConfig)}
    for key in data:
        _expect(key in known, str(key), "unknown field")
    kw: dict[str, Any] = {}
    for key, typ in _SCALARS.items():
        if key not in data:
            continue
        v = data[key]
        if v is None and key in ("rows", "cols", "sub_scenario", "demand_total", "interval_duration", "cooldown"):
            kw[key] = None
        elif typ is str:
            _expect(isinstance(v, str), key, f"expected a string, got {v!r}")
            kw[key] = v
        elif typ is bool:
            _expect(isinstance(v, bool), key, f"expected true/false, got {v!r}")
            kw[key] = v
        else:
            kw[key] = _number(data, key, "", typ)
    if "link" in data:
        link = data["link"]
        _expect(isinstance(link, Mapping), "link", "expected a mapping")
        lk = {}
        for f in fields(LinkTemplate):
            if f.name in link:
                lk[f.name] = _number(link, f.name, "link.", int if f.name == "lanes" else float)
        for key in link:
            _expect(key in lk, f"link.{key}", "unknown field")
        tmpl = LinkTemplate(**lk)
        try:
            tmpl.validate()
        except ValueError as exc:
            raise ConfigurationError(f"link: {exc}") from None
        kw["link"] = tmpl
    if "multipliers" in data:
        m = data["multipliers"]
        _expect(isinstance(m, (list, tuple)) and len(m) > 0, "multipliers", "expected a non-empty list")
        kw["multipliers"] = tuple(_number({i: x for i, x in enumerate(m)}, i, "multipliers.") for i in range(len(m)))
    if "occupancy" in data:
        occ = data["occupancy"]
        _expect(isinstance(occ, Mapping) and "support" in occ and "probabilities" in occ,
                "occupancy", "expected support and probabilities lists")
        try:
            kw["occupancy"] = OccupancyDistribution(tuple(int(v) for v in occ["support"]),
                                                    tuple(float(p) for p in occ["probabilities"]))
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"occupancy: {exc}") from None
    if "bus_routes" in data and data["bus_routes"] is not None:
        routes = data["bus_routes"]
        _expect(isinstance(routes, list), "bus_routes", "expected a list")
        parsed = []
        for i, r in enumerate(routes):
            path = f"bus_routes[{i}]"
            _expect(isinstance(r, Mapping) and "name" in r and "waypoints" in r, path, "needs name and waypoints")
            try:
                parsed.append(BusRoute(
                    name=str(r["name"]),
                    waypoints=tuple(str(w) for w in r["waypoints"]),
                    direction=str(r.get("direction", "uni")),
                    headway_mean=float(r.get("headway_mean", 120.0)),
                    occupancy_mean=float(r.get("occupancy_mean", 50.0)),
                    occupancy_spread=None if r.get("occupancy_spread") is None else float(r["occupancy_spread"]),
                    capacity=int(r.get("capacity", 100)),
                ))
            except (TypeError, ValueError) as exc:
                raise ConfigurationError(f"{path}: {exc}") from None
        kw["bus_routes"] = tuple(parsed)
    if "controllers" in data:
        cs = data["controllers"]
        _expect(isinstance(cs, list) and cs, "controllers", "expected a non-empty list")
        specs = []
        for i, c in enumerate(cs):
            if isinstance(c, str):
                specs.append(ControllerSpec(c))
            else:
                _expect(isinstance(c, Mapping) and "name" in c, f"controllers[{i}]", "expected a name or mapping")
                params = tuple(sorted((str(k), v) for k, v in c.items() if k != "name"))
                specs.append(ControllerSpec(str(c["name"]), params))
        kw["controllers"] = tuple(specs)
    if "sensing" in data:
        s = data["sensing"]
        _expect(isinstance(s, Mapping), "sensing", "expected a mapping")
        sk: dict[str, Any] = {}
        for key in s:
            _expect(key in ("private_occupancy_mode", "fixed_average", "apc_sigma_pct",
                            "cv_penetration", "buses_always_connected"), f"sensing.{key}", "unknown field")
        if "private_occupancy_mode" in s:
            sk["private_occupancy_mode"] = s["private_occupancy_mode"]
        if "fixed_average" in s:
            sk["fixed_average"] = _number(s, "fixed_average", "sensing.")
        if "apc_sigma_pct" in s:
            sk["apc_sigma"] = _number(s, "apc_sigma_pct", "sensing.") / 100.0
        if "cv_penetration" in s:
            sk["cv_penetration"] = _number(s, "cv_penetration", "sensing.")
        if "buses_always_connected" in s:
            sk["buses_always_connected"] = bool(s["buses_always_connected"])
        try:
            kw["sensing"] = SensingConfig(**sk)
        except ConfigurationError as exc:
            raise ConfigurationError(f"sensing: {exc}") from None
    if "seeds" in data:
        seeds = data["seeds"]
        _expect(isinstance(seeds, list), "seeds", "expected a list of integers")
        _expect(all(isinstance(x, int) and not isinstance(x, bool) and x >= 0 for x in seeds),
                "seeds", "expected non-negative integers")
        kw["seeds"] = tuple(seeds)
    cfg = ScenarioConfig(**kw)
    try:
        net = cfg.network()
        net.validate()
    except ValueError as exc:
        raise ConfigurationError(f"network: {exc}") from None
    for i, route in enumerate(cfg.resolved_bus_routes()):
        for _, wps in route.services():
            try:
                bus_route_path(net, wps)
            except ConfigurationError as exc:
                where = f"bus_routes[{i}]" if cfg.bus_routes is not None else f"bus route {route.name}"
                raise ConfigurationError(f"{where}: {exc}") from None
    return cfg


def load_config(path: str | os.PathLike) -> ScenarioConfig:
    import yaml

    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"{path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: invalid YAML ({exc})") from None
    return config_from_dict(data or {})


# ----------------------------------------------------------------------
# generation


@dataclass
class RunInputs:
    """Everything a seed's runs share: trips, routes and turn-ratio estimates."""

    network: NetworkGraph
    seed: int
    times: list[float]
    kinds: list[str]
    occupancies: list[int]
    routes: list[tuple[int, ...]]
    route_names: list[str]
    cv_draw: np.ndarray
    turn_ratios: list[float]

    def vehicles(self, sensing: SensingConfig) -> list[Vehicle]:
        """Fresh vehicles; connectivity is ``draw < penetration`` so it is nested in p."""
        p = sensing.cv_penetration
        out = []
        for i, (t, k, o, r, name) in enumerate(zip(self.times, self.kinds, self.occupancies, self.routes, self.route_names)):
            bus = k == "bus"
            connected = True if (bus and sensing.buses_always_connected) else bool(self.cv_draw[i] < p)
            out.append(Vehicle(i, k, o, r, t, connected=connected, route_name=name))
        return out


def prepare_inputs(config: ScenarioConfig, seed: int, network: NetworkGraph | None = None) -> RunInputs:
    net = network or config.network()
    rows, cols = config.grid
    profile = grid_demand_profile(net, config.total_target, config.interval, config.multipliers, 0.0, config.ns_ew_ratio)
    arrivals = generate_private_arrivals(profile, config.peak, seed, config.occupancy)
    choice = RouteChoice(net, config.route_k, config.route_theta)
    rng = substream(seed, "routing")
    events = [(a.time, 0, i, "car", a.occupancy, choice.sample(a.origin, a.destination, rng), "")
              for i, a in enumerate(arrivals)]
    routes_cfg = config.resolved_bus_routes()
    if routes_cfg:
        paths = {}
        for route in routes_cfg:
            for service, wps in route.services():
                paths[service] = bus_route_path(net, wps)
        for j, d in enumerate(generate_bus_trips(routes_cfg, config.peak, seed)):
            events.append((d.time, 1, j, "bus", d.occupancy, paths[d.route], d.route))
    events.sort(key=lambda e: e[:3])
    cv = substream(seed, "sensing").random(len(events))
    routes = [e[5] for e in events]
    return RunInputs(
        network=net,
        seed=seed,
        times=[e[0] for e in events],
        kinds=[e[3] for e in events],
        occupancies=[e[4] for e in events],
        routes=routes,
        route_names=[e[6] for e in events],
        cv_draw=cv,
        turn_ratios=empirical_turn_ratios(net, routes),
    )


def run_one(
    config: ScenarioConfig,
    inputs: RunInputs,
    controller: ControllerSpec,
    sensing: SensingConfig | None = None,
    decision_log=None,
    dump_path: str | os.PathLike | None = None,
    full_information: bool = False,
) -> RunMetrics:
    """Simulate one controller on prepared inputs and return its metrics."""
    sensing = sensing or config.sensing
    vehicles = inputs.vehicles(sensing)
    apc = ApcErrorModel(sensing, seed_sequence(inputs.seed, "apc")) if sensing.apc_sigma > 0 else None
    sat_rng = substream(inputs.seed, "saturation") if config.saturation_noise > 0 else None
    try:
        result = simulate(
            inputs.network, controller.build(), vehicles, config.horizon,
            sensing=sensing, turn_ratios=inputs.turn_ratios, dt=config.dt,
            control_interval=config.control_interval, lost_time=config.lost_time,
            saturation_noise=config.saturation_noise, saturation_rng=sat_rng,
            on_cross=apc, decision_log=decision_log, full_information=full_information,
        )
    except InvariantViolation as exc:
        state = getattr(exc, "state", None)
        if dump_path is not None and state is not None:
            Path(dump_path).parent.mkdir(parents=True, exist_ok=True)
            with open(dump_path, "w", newline="") as fh:
                StateDump(fh, state).write()
        raise
    acc = [(t, census) for t, _, _, census in result.samples]
    for t, entered, exited, census in result.samples:
        if entered != census + exited:
            raise InvariantViolation(f"conservation broken at t={t}")
    run_id = f"{controller.label}-s{inputs.seed}-a{fmt(sensing.apc_sigma * 100)}-p{fmt(sensing.cv_penetration)}"
    return ledger_from_vehicles(vehicles, config.horizon, acc, run_id)


# ----------------------------------------------------------------------
# orchestration


@dataclass
class RunRecord:
    scenario: str
    controller: str
    seed: int
    apc_sigma_pct: float
    cv_penetration: float
    metrics: RunMetrics

    def ident(self, h: str) -> dict:
        return {"config_hash": h, "scenario": self.scenario, "controller": self.controller, "seed": self.seed,
                "apc_sigma_pct": self.apc_sigma_pct, "cv_penetration": self.cv_penetration}


def _seed_job(args) -> list[RunRecord]:
    config, seed, variants, log_dir = args
    inputs = prepare_inputs(config, seed)
    out = []
    for spec, sensing in variants:
        log = None
        fh = None
        if log_dir is not None:
            fh = open(Path(log_dir) / f"decisions-{spec.label}-s{seed}-a{fmt(sensing.apc_sigma * 100)}"
                      f"-p{fmt(sensing.cv_penetration)}.csv", "w", newline="")
            log = DecisionLog(fh)
        try:
            dump = Path(log_dir or config.output_dir) / f"invariant-dump-{spec.label}-s{seed}.csv"
            m = run_one(config, inputs, spec, sensing, log, dump)
        finally:
            if fh is not None:
                fh.close()
        out.append(RunRecord(config.name, spec.label, seed, sensing.apc_sigma * 100.0, sensing.cv_penetration, m))
    return out


def execute(config: ScenarioConfig, variants: Sequence[tuple[ControllerSpec, SensingConfig]],
            log_dir: str | None = None) -> list[RunRecord]:
    """Run every variant for every seed; results come back in seed order."""
    jobs = [(config, s, tuple(variants), log_dir) for s in config.seeds]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            chunks = list(pool.map(_seed_job, jobs))
    else:
        chunks = [_seed_job(j) for j in jobs]
    return [r for chunk in chunks for r in chunk]


def _write(path: Path, writer, *args) -> None:
    buf = io.StringIO()
    writer(buf, *args)
    path.write_text(buf.getvalue())


def output_hash(config: ScenarioConfig, sweep: Mapping | None = None) -> str:
    """Config hash, extended with the sweep parameters when there are any."""
    if not sweep:
        return config_hash(config)
    blob = json.dumps({"config": config_hash(config), "sweep": _to_jsonable(dict(sweep))},
                      sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def output_path(config: ScenarioConfig, kind: str, sweep: Mapping | None = None) -> Path:
    return Path(config.output_dir) / f"{kind}-{config.name}-{output_hash(config, sweep)}"


def _out_dir(config: ScenarioConfig, kind: str, sweep: Mapping | None = None) -> tuple[Path, str]:
    d = output_path(config, kind, sweep)
    d.mkdir(parents=True, exist_ok=True)
    h = output_hash(config, sweep)
    # marks the directory incomplete until write_outputs replaces it
    (d / "manifest.json").write_text(json.dumps(
        {"kind": kind, "config_hash": h, "code_version": __version__, "complete": False},
        indent=2, sort_keys=True) + "\n")
    return d, h


def _write_manifest(d: Path, config: ScenarioConfig, h: str, kind: str, records: Sequence[RunRecord],
                    files: Sequence[str], sweep: Mapping | None = None) -> None:
    manifest = {
        "kind": kind,
        "config_hash": h,
        "sweep": _to_jsonable(dict(sweep or {})),
        "code_version": __version__,
        "config": config.to_dict(),
        "runs": [{"controller": r.controller, "seed": r.seed, "apc_sigma_pct": r.apc_sigma_pct,
                  "cv_penetration": r.cv_penetration, "run_id": r.metrics.run_id} for r in records],
        "files": sorted(files),
        "complete": True,
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _comparison_rows(records: Sequence[RunRecord], baseline: str = "qmp"):
    """Percent change vs the baseline controller per group, paired by seed."""
    groups: dict[tuple, dict[str, dict[int, RunMetrics]]] = {}
    for r in records:
        key = (r.scenario, r.apc_sigma_pct, r.cv_penetration)
        groups.setdefault(key, {}).setdefault(r.controller, {})[r.seed] = r.metrics
    rows = []
    for key in sorted(groups):
        by_ctrl = groups[key]
        base = by_ctrl.get(baseline)
        for ctrl in sorted(by_ctrl):
            runs = by_ctrl[ctrl]
            for metric in ("private_vtt_h", "bus_vtt_h", "ptt_h"):
                vals = [getattr(runs[s], metric) for s in sorted(runs)]
                mean, se = mean_se(vals) if len(vals) > 1 else (vals[0], math.nan)
                pc_mean = pc_se = math.nan
                if base is not None and ctrl != baseline:
                    seeds = sorted(set(runs) & set(base))
                    if len(seeds) > 1:
                        pc_mean, pc_se = paired_percent_change(
                            [getattr(runs[s], metric) for s in seeds], [getattr(base[s], metric) for s in seeds])
                rows.append([*key, ctrl, metric, len(vals), mean, se, pc_mean, pc_se])
    return rows


def _write_comparison(stream, h: str, records: Sequence[RunRecord]) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["config_hash", "scenario", "apc_sigma_pct", "cv_penetration", "controller", "metric",
                "n", "mean", "se", "pct_change_vs_qmp", "pct_change_se"])
    for scen, sigma, pen, ctrl, metric, n, mean, se, pcm, pcs in _comparison_rows(records):
        w.writerow([h, scen, fmt(sigma), fmt(pen), ctrl, metric, n, fmt(mean), fmt(se), fmt(pcm), fmt(pcs)])


def write_outputs(config: ScenarioConfig, kind: str, records: Sequence[RunRecord],
                  sweep: Mapping | None = None, extra: Sequence[tuple[str, Any]] = ()) -> Path:
    """Write the CSV tables, then the completed manifest, into the output directory."""
    d, h = _out_dir(config, kind, sweep)
    runs = [(h, r.metrics.run_id if r.scenario == config.name else f"{r.scenario}-{r.metrics.run_id}", r.metrics)
            for r in records]
    _write(d / "runs.csv", write_runs_csv, [(r.ident(h), r.metrics) for r in records])
    _write(d / "accumulation.csv", write_accumulation_csv, runs)
    _write(d / "buckets.csv", write_buckets_csv, runs)
    _write(d / "comparison.csv", _write_comparison, h, records)
    files = ["runs.csv", "accumulation.csv", "buckets.csv", "comparison.csv"]
    for name, writer in extra:
        _write(d / name, writer, h, records)
        files.append(name)
    _write_manifest(d, config, h, kind, records, files, sweep)
    return d


def matrix_sweep(sub_scenarios: Sequence[int]) -> dict:
    return {"sub_scenarios": [int(k) for k in sub_scenarios]}


def apc_sweep(sigmas_pct: Sequence[float], controllers: Sequence[ControllerSpec]) -> dict:
    return {"apc_sigma_pct": [float(x) for x in sigmas_pct], "controllers": [c.label for c in controllers]}


def cv_sweep(penetrations: Sequence[float], controllers: Sequence[ControllerSpec]) -> dict:
    return {"cv_penetration": [float(p) for p in penetrations], "controllers": [c.label for c in controllers]}


def run_scenario(config: ScenarioConfig, write: bool = True, log_decisions: bool = False) -> list[RunRecord]:
    """Every controller on every seed of ``config``; writes CSVs and a manifest."""
    variants = [(c, config.sensing) for c in config.controllers]
    log_dir = None
    if write and log_decisions:
        d, _ = _out_dir(config, "run")
        log_dir = str(d)
    records = execute(config, variants, log_dir)
    if write:
        write_outputs(config, "run", records)
    return records


def run_matrix(config: ScenarioConfig, sub_scenarios: Sequence[int] = tuple(range(1, 9)),
               write: bool = True) -> list[RunRecord]:
    """The Table-2 style sweep: the same config under each sub-scenario."""
    records = []
    for k in sub_scenarios:
        sub = replace(config, sub_scenario=k, name=f"{config.name}-sub{k}")
        records.extend(execute(sub, [(c, sub.sensing) for c in sub.controllers]))
    if write:
        write_outputs(config, "matrix", records, matrix_sweep(sub_scenarios))
    return records


def run_apc_sweep(config: ScenarioConfig, sigmas_pct: Sequence[float] = (0, 10, 20, 30, 40),
                  controllers: Sequence[ControllerSpec] | None = None, write: bool = True) -> list[RunRecord]:
    """One run per seed, controller and APC error level (percent)."""
    ctrls = controllers or config.controllers
    variants = [(c, replace(config.sensing, apc_sigma=s / 100.0)) for s in sigmas_pct for c in ctrls]
    records = execute(config, variants)
    if write:
        write_outputs(config, "apc", records, apc_sweep(sigmas_pct, ctrls), [("apc_table.csv", _write_apc_table)])
    return records


def _write_apc_table(stream, h: str, records: Sequence[RunRecord]) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["config_hash", "controller", "apc_sigma_pct", "metric", "mean", "se"])
    groups: dict[tuple, list[RunMetrics]] = {}
    for r in records:
        groups.setdefault((r.controller, r.apc_sigma_pct), []).append(r.metrics)
    for (ctrl, sigma) in sorted(groups):
        runs = groups[(ctrl, sigma)]
        for metric in ("private_vtt_h", "bus_vtt_h", "ptt_h"):
            vals = [getattr(m, metric) for m in runs]
            mean, se = mean_se(vals) if len(vals) > 1 else (vals[0], math.nan)
            w.writerow([h, ctrl, fmt(sigma), metric, fmt(mean), fmt(se)])


def run_cv_sweep(config: ScenarioConfig, penetrations: Sequence[float] = (0.2, 0.4, 0.6, 0.8, 1.0),
                 controllers: Sequence[ControllerSpec] | None = None, write: bool = True) -> list[RunRecord]:
    """One full controller comparison per connected-vehicle penetration."""
    for p in penetrations:
        if not 0.0 < p <= 1.0:
            raise ConfigurationError(f"penetrations: {p} outside (0, 1]")
    ctrls = controllers or config.controllers
    variants = [(c, replace(config.sensing, cv_penetration=float(p))) for p in penetrations for c in ctrls]
    records = execute(config, variants)
    if write:
        write_outputs(config, "cv", records, cv_sweep(penetrations, ctrls))
    return records
