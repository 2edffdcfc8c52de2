"""Feasible-demand oracle and empirical queue-stability trials.

A demand vector ``d`` (veh/step per movement) is feasible for an isolated
intersection when some time split ``lambda`` over the phases (``lambda >= 0``,
``sum lambda <= 1``) gives every movement enough service:
``d(l,m) <= c(l,m) * sum_e lambda_e S_e(l,m)``.

Three deciders are provided.  When each movement belongs to exactly one
phase the problem collapses to ``sum_phase max d/c <= 1``.  In general the
smallest total share meeting every movement is a small linear program,
solved here by a dense two-phase simplex.  The third decider searches a
lambda grid of resolution ``h`` twice: once letting each movement fall
short by ``h`` per covering phase and once with exact requirements; a "found" in
the exact search proves feasibility and a "not found" in the relaxed one
proves infeasibility.  While neither proof is available the grid is refined
tenfold, a few times at most.  Its cost grows quickly with the phase count
and it is meant as a brute-force cross-check.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence, TextIO

import numpy as np

from .controllers import OCCMP
from .demand import PRIVATE_OCCUPANCY, OccupancyDistribution, substream
from .dynamics import Vehicle
from .metrics import fmt
from .network import ConfigurationError, build_grid
from .simulation import simulate

__all__ = [
    "FeasibilityProblem",
    "FeasibilityResult",
    "is_feasible",
    "min_total_share",
    "boundary_demand",
    "TrialResult",
    "run_stability_trial",
    "verdict",
    "write_stability_csv",
    "MIN_HORIZON",
]

MIN_HORIZON = 5000
BOUNDED_RATIO = 1.5
GROWTH_FRACTION = 0.25


@dataclass(frozen=True)
class FeasibilityProblem:
    demand: tuple[float, ...]  # veh/step
    saturation: tuple[float, ...]  # veh/step
    phases: tuple[tuple[int, ...], ...]  # 0/1 activation row per phase

    def __post_init__(self) -> None:
        n = len(self.demand)
        if len(self.saturation) != n:
            raise ConfigurationError("demand and saturation differ in length")
        if not self.phases:
            raise ConfigurationError("at least one phase is required")
        for row in self.phases:
            if len(row) != n or any(v not in (0, 1) for v in row):
                raise ConfigurationError("phase rows must be 0/1 vectors over the movements")
        for m in range(n):
            if not any(row[m] for row in self.phases):
                raise ConfigurationError(f"movement {m} is not served by any phase")
        if any(d < 0 for d in self.demand) or any(c < 0 for c in self.saturation):
            raise ConfigurationError("demand and saturation must be >= 0")

    @classmethod
    def from_sets(cls, demand, saturation, phase_sets) -> "FeasibilityProblem":
        n = len(demand)
        rows = tuple(tuple(1 if m in set(s) else 0 for m in range(n)) for s in phase_sets)
        return cls(tuple(float(x) for x in demand), tuple(float(x) for x in saturation), rows)

    @property
    def exclusive(self) -> bool:
        return all(sum(row[m] for row in self.phases) == 1 for m in range(len(self.demand)))

    def scaled(self, kappa: float) -> "FeasibilityProblem":
        return FeasibilityProblem(tuple(kappa * d for d in self.demand), self.saturation, self.phases)

    def ratios(self) -> list[float]:
        out = []
        for d, c in zip(self.demand, self.saturation):
            if c > 0:
                out.append(d / c)
            else:
                out.append(math.inf if d > 0 else 0.0)
        return out

    def closed_form_total(self) -> float:
        """``sum_phase max d/c`` (meaningful for exclusive structures)."""
        r = self.ratios()
        return sum(max((r[m] for m, s in enumerate(row) if s), default=0.0) for row in self.phases)


@dataclass(frozen=True)
class FeasibilityResult:
    feasible: bool
    witness: tuple[float, ...] | None
    slack: float
    violated: int | None
    method: str
    certified: bool = True  # False only for a grid answer left inside its tolerance band


def _closed_form(p: FeasibilityProblem) -> FeasibilityResult:
    r = p.ratios()
    needs = []
    for row in p.phases:
        needs.append(max((r[m] for m, s in enumerate(row) if s), default=0.0))
    total = sum(needs)
    if total <= 1.0:
        return FeasibilityResult(True, tuple(needs), 1.0 - total, None, "closed_form")
    # report the first movement left short when phases get their needs in order
    budget = 1.0
    violated = None
    for row, need in zip(p.phases, needs):
        if need > budget:
            members = [m for m, s in enumerate(row) if s]
            violated = max(members, key=lambda m: (r[m], -m))
            break
        budget -= need
    return FeasibilityResult(False, None, 1.0 - total, violated, "closed_form")


def _disjoint_groups(rows, open_ms: list[int], start: int, max_size: int = 3) -> list[tuple[int, ...]]:
    """Groups of 2..``max_size`` movements with no phase from ``start`` on serving two of them."""
    later = rows[start:]

    def apart(a: int, b: int) -> bool:
        return not any(row[a] and row[b] for row in later)

    out = []
    for k in range(2, max_size + 1):
        for g in itertools.combinations(open_ms, k):
            if all(apart(a, b) for a, b in itertools.combinations(g, 2)):
                out.append(g)
    return out


def _grid_search(p: FeasibilityProblem, resolution: float, relaxed: bool = True) -> FeasibilityResult:
    """Search the lambda grid of step ``resolution``.

    With ``relaxed`` each movement may fall short by ``h`` per covering
    phase, the most that rounding an exact split down to the grid can
    lose, so "not found" proves infeasibility. Otherwise requirements are
    exact and "found" proves feasibility.
    """
    units = int(round(1.0 / resolution))
    h = 1.0 / units
    r = p.ratios()
    n = len(r)
    rows = p.phases
    n_ph = len(rows)
    cover_count = [sum(row[m] for row in rows) for m in range(n)]
    slack = [cover_count[m] * h if relaxed else 0.0 for m in range(n)]
    req = [max(0.0, x - sl) * units if math.isfinite(x) else math.inf for x, sl in zip(r, slack)]
    last_cover = [max(e for e in range(n_ph) if rows[e][m]) for m in range(n)]
    covers = [[m for m in range(n) if rows[e][m]] for e in range(n_ph)]
    closing = [[m for m in range(n) if last_cover[m] == e] for e in range(n_ph)]
    # open movements that no later phase serves together need disjoint shares
    groups = [_disjoint_groups(rows, [m for m in range(n) if last_cover[m] > e], e + 1) for e in range(n_ph)]
    eps = 1e-9
    best_short: list[tuple[float, int]] = []

    def search(e: int, cov: list[float], budget: int, lam: list[int]):
        if e == n_ph:
            return list(lam)
        resid = [req[m] - cov[m] for m in range(n)]
        lo = max((resid[m] for m in closing[e]), default=0.0)
        hi = max((resid[m] for m in covers[e]), default=0.0)
        lo_u = max(0, math.ceil(lo - eps))
        hi_u = min(budget, max(lo_u, math.ceil(hi - eps)))
        if lo_u > budget:
            short = max(closing[e], key=lambda m: (resid[m], -m))
            best_short.append((resid[short] - budget, short))
            return None
        for v in range(lo_u, hi_u + 1):
            new_cov = cov[:]
            for m in covers[e]:
                new_cov[m] += v
            left = budget - v
            # every movement still open must fit in the remaining budget
            if any(req[m] - new_cov[m] > left + eps for m in range(n) if last_cover[m] > e):
                short = max((m for m in range(n) if last_cover[m] > e),
                            key=lambda m: (req[m] - new_cov[m], -m))
                best_short.append((req[short] - new_cov[short] - left, short))
                continue
            if any(sum(max(0.0, req[m] - new_cov[m]) for m in g) > left + eps for g in groups[e]):
                continue
            lam.append(v)
            found = search(e + 1, new_cov, left, lam)
            lam.pop()
            if found is not None:
                return found
        return None

    if any(math.isinf(x) for x in req):
        m = next(i for i, x in enumerate(req) if math.isinf(x))
        return FeasibilityResult(False, None, -math.inf, m, "grid")
    sol = search(0, [0.0] * n, units, [])
    if sol is None:
        violated = min(best_short)[1] if best_short else None
        return FeasibilityResult(False, None, -h, violated, "grid")
    lam = tuple(v * h for v in sol)
    return FeasibilityResult(True, lam, 1.0 - sum(lam), None, "grid")


def _meets_exactly(p: FeasibilityProblem, lam: Sequence[float]) -> bool:
    r = p.ratios()
    return all(sum(l for l, row in zip(lam, p.phases) if row[m]) >= r[m] - 1e-12 for m in range(len(r)))


def _certified_grid(p: FeasibilityProblem, tolerance: float, max_refine: int = 3) -> FeasibilityResult:
    """Grid decision refined tenfold while the relaxed and exact searches disagree."""
    h = tolerance
    for _ in range(max_refine + 1):
        loose = _grid_search(p, h, relaxed=True)
        if not loose.feasible:
            return loose
        if _meets_exactly(p, loose.witness):
            return loose
        tight = _grid_search(p, h, relaxed=False)
        if tight.feasible:
            return tight
        h /= 10.0
    return replace(loose, certified=False)


_PIVOT_TOL = 1e-12


def _pivot(t: np.ndarray, basis: list[int], row: int, col: int) -> None:
    t[row] /= t[row, col]
    for i in range(t.shape[0]):
        if i != row and t[i, col] != 0.0:
            t[i] -= t[i, col] * t[row]
    basis[row] = col


def _simplex(t: np.ndarray, basis: list[int], cost: np.ndarray, allowed: int) -> None:
    """Minimize ``cost`` over the tableau in place; Bland's rule avoids cycling."""
    while True:
        reduced = cost[:allowed] - cost[basis] @ t[:, :allowed]
        enter = next((j for j in range(allowed) if reduced[j] < -1e-11), None)
        if enter is None:
            return
        best = None
        for i in range(t.shape[0]):
            a = t[i, enter]
            if a > _PIVOT_TOL:
                key = (t[i, -1] / a, basis[i])
                if best is None or key < best[0]:
                    best = (key, i)
        if best is None:  # unbounded; cannot happen with non-negative costs
            raise RuntimeError("unbounded linear program")
        _pivot(t, basis, best[1], enter)


def min_total_share(problem: FeasibilityProblem) -> tuple[float, tuple[float, ...]]:
    """Smallest ``sum lambda`` with ``sum_e lambda_e S_e(m) >= d/c`` for every movement.

    Returns the optimum and a minimizing ``lambda``. Movements with ``c = 0``
    must carry no demand.
    """
    r = np.array(problem.ratios(), dtype=float)
    if not np.all(np.isfinite(r)):
        raise ConfigurationError("a movement with c = 0 carries demand")
    s = np.array(problem.phases, dtype=float).T  # movements x phases
    n, k = s.shape
    # columns: lambda (k), surplus (n), artificial (n), rhs
    t = np.zeros((n, k + 2 * n + 1))
    t[:, :k] = s
    t[:, k:k + n] = -np.eye(n)
    t[:, k + n:k + 2 * n] = np.eye(n)
    t[:, -1] = r
    basis = list(range(k + n, k + 2 * n))
    phase1 = np.concatenate([np.zeros(k + n), np.ones(n)])
    _simplex(t, basis, phase1, k + 2 * n)
    # drive zero-level artificials out of the basis; drop redundant rows
    keep = []
    for i in range(n):
        if basis[i] >= k + n:
            col = next((j for j in range(k + n) if abs(t[i, j]) > 1e-9), None)
            if col is None:
                continue
            _pivot(t, basis, i, col)
        keep.append(i)
    t = t[keep]
    basis = [basis[i] for i in keep]
    phase2 = np.concatenate([np.ones(k), np.zeros(2 * n)])
    _simplex(t, basis, phase2, k + n)
    lam = np.zeros(k)
    for i, b in enumerate(basis):
        if b < k:
            lam[b] = max(0.0, t[i, -1])
    return float(lam.sum()), tuple(float(x) for x in lam)


def _lp(p: FeasibilityProblem) -> FeasibilityResult:
    total, lam = min_total_share(p)
    if total <= 1.0 + 1e-12:
        return FeasibilityResult(True, lam, 1.0 - total, None, "lp")
    # the tight movement with the highest load is reported as violated
    r = p.ratios()
    served = [sum(l for l, row in zip(lam, p.phases) if row[m]) for m in range(len(r))]
    tight = [m for m in range(len(r)) if served[m] <= r[m] + 1e-9 and r[m] > 0]
    violated = max(tight, key=lambda m: (r[m], -m)) if tight else None
    return FeasibilityResult(False, None, 1.0 - total, violated, "lp")


def is_feasible(problem: FeasibilityProblem, tolerance: float = 1e-3, method: str = "auto") -> FeasibilityResult:
    """Decide whether ``problem.demand`` lies in the feasible region.

    ``method`` is ``closed_form`` (exclusive phases only), ``lp``, ``grid``,
    or ``auto`` (closed form when the structure allows it, else ``lp``). A
    movement with ``c = 0`` and positive demand is infeasible under every
    method.
    """
    r = problem.ratios()
    for m, x in enumerate(r):
        if math.isinf(x):
            return FeasibilityResult(False, None, -math.inf, m, method)
    if method == "auto":
        method = "closed_form" if problem.exclusive else "lp"
    if method == "closed_form":
        if not problem.exclusive:
            raise ConfigurationError("closed form needs each movement in exactly one phase")
        return _closed_form(problem)
    if method == "grid":
        return _certified_grid(problem, tolerance)
    if method == "lp":
        return _lp(problem)
    raise ConfigurationError(f"unknown method {method!r}")


# ----------------------------------------------------------------------
# empirical trials


def isolated_problem(shape: Sequence[float] | None = None, saturation_vph: float = 1800.0, dt: float = 1.0):
    """Network and boundary feasibility problem of the isolated four-phase intersection.

    ``shape`` gives relative demand per movement; the default loads every
    movement to the same ``d/c``. The demand is scaled so the closed-form
    total is exactly 1.
    """
    from .network import LinkTemplate

    tmpl = LinkTemplate(saturation_flow=saturation_vph)
    net = build_grid(1, 1, tmpl, unbounded_sources=True)
    node = net.intersections[0]
    mids = list(node.movement_ids)
    c = [net.movements[m].saturation_flow / 3600.0 * dt for m in mids]
    w = list(shape) if shape is not None else [1.0] * len(mids)
    if len(w) != len(mids) or any(x < 0 for x in w):
        raise ConfigurationError("shape needs one non-negative weight per movement")
    idx = {m: i for i, m in enumerate(mids)}
    sets = [[idx[m] for m in ph.served_movements] for ph in node.phases]
    base = FeasibilityProblem.from_sets([wi * ci for wi, ci in zip(w, c)], c, sets)
    total = base.closed_form_total()
    if not total > 0:
        raise ConfigurationError("shape must put demand on some movement")
    return net, mids, base.scaled(1.0 / total)


def boundary_demand(shape: Sequence[float] | None = None) -> FeasibilityProblem:
    return isolated_problem(shape)[2]


@dataclass
class TrialResult:
    seed: int
    kappa: float
    controller: str
    verdict: str
    ratio: float
    slope: float
    excess: float
    mean_q2: float
    mean_q4: float
    queue: np.ndarray = field(repr=False, default=None)


def verdict(queue: np.ndarray, excess: float) -> tuple[str, float, float, float, float]:
    """(verdict, ratio, slope, mean of 2nd quarter, mean of last quarter)."""
    q = np.asarray(queue, dtype=float)
    h = len(q)
    if h < MIN_HORIZON:
        raise ConfigurationError(f"horizon {h} is shorter than {MIN_HORIZON} steps")
    q2 = float(q[h // 4: h // 2].mean())
    q4 = float(q[3 * h // 4:].mean())
    ratio = q4 / q2 if q2 > 0 else (math.inf if q4 > 0 else 1.0)
    tail = q[h // 2:]
    t = np.arange(len(tail), dtype=float)
    slope = float(np.polyfit(t, tail, 1)[0])
    if ratio < BOUNDED_RATIO:
        v = "bounded"
    elif slope > GROWTH_FRACTION * excess:
        v = "growing"
    else:
        v = "indeterminate"
    return v, ratio, slope, q2, q4


def run_stability_trial(
    controller=None,
    kappa: float = 0.8,
    horizon: int = 20000,
    seeds: Iterable[int] = range(10),
    shape: Sequence[float] | None = None,
    occupancy: OccupancyDistribution = PRIVATE_OCCUPANCY,
    keep_queues: bool = False,
) -> list[TrialResult]:
    """Stationary Poisson demand at ``kappa`` times the boundary, one trial per seed.

    The total queue is the sum of stop-line queues after every step. The
    excess rate is ``sum (kappa d - c sum_e lambda_e S_e)^+`` using the
    boundary witness ``lambda``.
    """
    if not kappa > 0:
        raise ConfigurationError("kappa must be > 0")
    if horizon < MIN_HORIZON:
        raise ConfigurationError(f"horizon {horizon} is shorter than {MIN_HORIZON} steps")
    controller = controller or OCCMP()
    net, mids, boundary = isolated_problem(shape)
    res = is_feasible(boundary)
    lam = res.witness
    service = [c * sum(l for l, row in zip(lam, boundary.phases) if row[i])
               for i, c in enumerate(boundary.saturation)]
    rates = np.array([kappa * d for d in boundary.demand])
    excess = float(sum(max(0.0, d - s) for d, s in zip(rates, service)))
    routes = [(net.movements[m].upstream, net.movements[m].downstream) for m in mids]
    support = np.asarray(occupancy.support)
    probs = np.asarray(occupancy.probabilities)
    out = []
    for seed in seeds:
        rng = substream(seed, "demand")
        counts = rng.poisson(rates, size=(horizon, len(mids)))
        occ_rng = substream(seed, "occupancy")
        total = int(counts.sum())
        occs = occ_rng.choice(support, size=total, p=probs).tolist()
        vehicles = []
        k = 0
        steps, cols = np.nonzero(counts)
        for t, j in zip(steps.tolist(), cols.tolist()):
            for _ in range(int(counts[t, j])):
                vehicles.append(Vehicle(k, "car", occs[k], routes[j], float(t)))
                k += 1
        result = simulate(net, controller, vehicles, float(horizon), record_queues=True, full_information=True)
        q = result.queue_totals
        v, ratio, slope, q2, q4 = verdict(q, excess)
        out.append(TrialResult(seed, kappa, getattr(controller, "name", type(controller).__name__),
                               v, ratio, slope, excess, q2, q4, q if keep_queues else None))
    return out


def write_stability_csv(stream: TextIO, results: Iterable[TrialResult]) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["controller", "kappa", "seed", "verdict", "ratio", "slope", "excess_rate", "mean_q2", "mean_q4"])
    for r in results:
        w.writerow([r.controller, fmt(r.kappa), r.seed, r.verdict, fmt(r.ratio), fmt(r.slope),
                    fmt(r.excess), fmt(r.mean_q2), fmt(r.mean_q4)])
