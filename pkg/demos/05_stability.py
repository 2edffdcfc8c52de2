"""Feasible demand at an isolated intersection and empirical queue stability.

Run: python3 demos/05_stability.py
"""

from __future__ import annotations

from occmp.controllers import OCCMP, RBMP
from occmp.stability import FeasibilityProblem, boundary_demand, is_feasible, run_stability_trial

p = FeasibilityProblem.from_sets([0.4, 0.4], [1.0, 1.0], [[0], [1]])
print("two phases at 0.4 each:", is_feasible(p))
tri = FeasibilityProblem.from_sets([0.5, 0.5, 0.5], [1.0] * 3, [[0, 1], [1, 2], [0, 2]])
print("overlapping phases:", is_feasible(tri, method="lp"))
print("  grid cross-check:", is_feasible(tri, method="grid"))

boundary = boundary_demand()
print(f"\nisolated four-phase boundary: d/c = {boundary.ratios()[0]:.2f} per movement, "
      f"closed-form total {boundary.closed_form_total():.3f}")
for ctrl in (OCCMP(), RBMP()):
    for kappa in (0.8, 1.2):
        res = run_stability_trial(ctrl, kappa, horizon=10000, seeds=range(3))
        print(f"{ctrl.name:6s} kappa {kappa}: " + ", ".join(
            f"{r.verdict} (ratio {r.ratio:.2f}, slope {r.slope:.3f}/step vs excess {r.excess:.3f})" for r in res))
