"""Travel-time, accumulation and comparison metrics over per-vehicle ledgers.

Travel times use true occupancies whatever the controller saw.  Vehicles
still in the network at the horizon are censored: they contribute
``horizon - entry`` and are counted separately.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

__all__ = [
    "BaselineError",
    "RunMetrics",
    "BUCKETS",
    "AGGREGATES",
    "ledger_from_vehicles",
    "percent_change",
    "mean_se",
    "summarize",
    "paired_percent_change",
    "fmt",
    "write_runs_csv",
    "write_accumulation_csv",
    "write_buckets_csv",
]

BUCKETS = ("1", "2", "3", "4", "5", "6+")
AGGREGATES = ("private_vtt_h", "bus_vtt_h", "ptt_h", "final_accumulation", "mean_accumulation")


class BaselineError(ValueError):
    """Percent change requested against a non-positive baseline."""


def fmt(x: float) -> str:
    """Deterministic float formatting for CSV output."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if math.isnan(x):
        return "nan"
    return f"{x:.10g}"


@dataclass
class RunMetrics:
    """Ledger and aggregates of one simulation run.

    ``exit`` holds ``nan`` for censored vehicles. ``accumulation`` is a list
    of ``(time s, vehicles in network)`` samples.
    """

    kind: np.ndarray  # 0 private, 1 bus
    occupancy: np.ndarray
    entry: np.ndarray
    exit: np.ndarray
    horizon: float
    accumulation: list[tuple[float, int]] = field(default_factory=list)
    run_id: str = ""

    def __post_init__(self) -> None:
        self.kind = np.asarray(self.kind, dtype=np.int8)
        self.occupancy = np.asarray(self.occupancy, dtype=np.int64)
        self.entry = np.asarray(self.entry, dtype=float)
        self.exit = np.asarray(self.exit, dtype=float)
        if np.any(self.occupancy < 1):
            raise ValueError("occupancies must be >= 1")

    @property
    def censored(self) -> np.ndarray:
        return np.isnan(self.exit)

    @property
    def travel_time(self) -> np.ndarray:
        """Seconds in network per vehicle; censored trips end at the horizon."""
        end = np.where(self.censored, self.horizon, self.exit)
        return end - self.entry

    @property
    def n_censored(self) -> int:
        return int(self.censored.sum())

    @property
    def private_vtt_h(self) -> float:
        return float(self.travel_time[self.kind == 0].sum() / 3600.0)

    @property
    def bus_vtt_h(self) -> float:
        return float(self.travel_time[self.kind == 1].sum() / 3600.0)

    @property
    def ptt_h(self) -> float:
        return float((self.occupancy * self.travel_time).sum() / 3600.0)

    @property
    def final_accumulation(self) -> float:
        return float(self.accumulation[-1][1]) if self.accumulation else 0.0

    @property
    def mean_accumulation(self) -> float:
        if not self.accumulation:
            return 0.0
        return float(np.mean([a for _, a in self.accumulation]))

    def accumulation_at(self, t: float) -> float:
        """Sampled accumulation at the last sample time not after ``t``."""
        best = 0.0
        for s, a in self.accumulation:
            if s > t:
                break
            best = float(a)
        return best

    def bucket_vtt_h(self) -> dict[str, float]:
        tt = self.travel_time
        out = {b: 0.0 for b in BUCKETS}
        for b in BUCKETS:
            out[b] = float(tt[self._bucket_mask(b)].sum() / 3600.0)
        return out

    def bucket_counts(self) -> dict[str, int]:
        return {b: int(self._bucket_mask(b).sum()) for b in BUCKETS}

    def _bucket_mask(self, b: str) -> np.ndarray:
        if b == "6+":
            return (self.kind == 1) | (self.occupancy >= 6)
        return (self.kind == 0) & (self.occupancy == int(b))

    def accumulation_from_ledger(self, t: float) -> int:
        """Entries strictly before ``t`` minus exits at or before ``t``."""
        entered = int((self.entry < t).sum())
        exited = int((~self.censored & (self.exit <= t)).sum())
        return entered - exited

    def aggregates(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in AGGREGATES}


def ledger_from_vehicles(vehicles, horizon: float, accumulation=(), run_id: str = "") -> RunMetrics:
    vs = list(vehicles)
    return RunMetrics(
        kind=[1 if v.kind == "bus" else 0 for v in vs],
        occupancy=[v.true_occupancy for v in vs],
        entry=[v.entry_time for v in vs],
        exit=[math.nan if v.exit_time is None else v.exit_time for v in vs],
        horizon=horizon,
        accumulation=list(accumulation),
        run_id=run_id,
    )


def percent_change(metric: float, baseline: float) -> float:
    if not baseline > 0:
        raise BaselineError(f"baseline must be > 0, got {baseline}")
    return 100.0 * (metric - baseline) / baseline


def mean_se(values: Sequence[float]) -> tuple[float, float]:
    """Sample mean and standard error (sample std / sqrt(n))."""
    a = np.asarray(values, dtype=float)
    if a.size < 2:
        raise ValueError("need at least two values for a standard error")
    return float(a.mean()), float(a.std(ddof=1) / math.sqrt(a.size))


def summarize(runs: Sequence[RunMetrics], names: Iterable[str] = AGGREGATES) -> dict[str, tuple[float, float]]:
    """Mean and standard error of each aggregate across seeds."""
    if len(runs) < 2:
        raise ValueError("summarize needs at least two runs")
    return {n: mean_se(sorted(getattr(r, n) for r in runs)) for n in names}


def paired_percent_change(metrics: Sequence[float], baselines: Sequence[float]) -> tuple[float, float]:
    """Mean and standard error of per-seed percent changes."""
    if len(metrics) != len(baselines):
        raise ValueError("paired sequences differ in length")
    return mean_se([percent_change(m, b) for m, b in zip(metrics, baselines)])


RUN_COLUMNS = (
    "config_hash", "scenario", "controller", "seed", "apc_sigma_pct", "cv_penetration",
    "private_vtt_h", "bus_vtt_h", "ptt_h", "n_private", "n_bus", "n_censored",
    "final_accumulation", "mean_accumulation",
)


def write_runs_csv(stream: TextIO, rows: Iterable[tuple[Mapping, RunMetrics]]) -> None:
    """One row per run; ``rows`` pairs identifying fields with the metrics."""
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(RUN_COLUMNS)
    for ident, m in rows:
        w.writerow([
            ident["config_hash"], ident["scenario"], ident["controller"], ident["seed"],
            fmt(ident.get("apc_sigma_pct", 0.0)), fmt(ident.get("cv_penetration", 1.0)),
            fmt(m.private_vtt_h), fmt(m.bus_vtt_h), fmt(m.ptt_h),
            int((m.kind == 0).sum()), int((m.kind == 1).sum()), m.n_censored,
            fmt(m.final_accumulation), fmt(m.mean_accumulation),
        ])


def write_accumulation_csv(stream: TextIO, runs: Iterable[tuple[str, str, RunMetrics]]) -> None:
    """Long format: config hash, run id, time, accumulation."""
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["config_hash", "run_id", "time_s", "accumulation"])
    for h, run_id, m in runs:
        for t, a in m.accumulation:
            w.writerow([h, run_id, fmt(t), int(a)])


def write_buckets_csv(stream: TextIO, runs: Iterable[tuple[str, str, RunMetrics]]) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["config_hash", "run_id", "bucket", "vehicles", "vtt_h"])
    for h, run_id, m in runs:
        counts = m.bucket_counts()
        for b, v in m.bucket_vtt_h().items():
            w.writerow([h, run_id, b, counts[b], fmt(v)])
