"""A desk-scale controller comparison, the way the acceptance suite runs it.

Sub-scenario 1 (low private demand, many well-filled buses), controllers
see 1.5 persons per private car. Besides the three standard controllers
this also runs Q-MP with negative weights clipped, which separates the
effect of clipping from the effect of occupancy weighting.

Run: python3 demos/06_desk_experiment.py [--seeds 1-10]
"""

from __future__ import annotations

import argparse

import numpy as np

from occmp.experiment import config_from_dict, run_scenario
from occmp.metrics import mean_se, percent_change

parser = argparse.ArgumentParser()
parser.add_argument("--seeds", default="1-10")
args = parser.parse_args()
a, _, b = args.seeds.partition("-")
seeds = list(range(int(a), int(b or a) + 1))

variants = {
    "qmp": "qmp",
    "qmp-clip": {"name": "qmp", "clip": True},
    "occmp": "occmp",
    "rbmp": "rbmp",
}
labels = list(variants)
table = {}
for label, ctrl in variants.items():
    cfg = config_from_dict({
        "sensing": {"private_occupancy_mode": "fixed_average"},
        "controllers": [ctrl],
        "seeds": seeds,
    })
    table[label] = [r.metrics for r in run_scenario(cfg, write=False)]

base = table["qmp"]
print(f"{'controller':10s} {'private VTT h':>16s} {'bus VTT h':>14s} {'PTT pax-h':>14s}  vs Q-MP (private/bus/PTT %)")
for name in labels:
    runs = table[name]
    cells = []
    for metric in ("private_vtt_h", "bus_vtt_h", "ptt_h"):
        m, se = mean_se([getattr(x, metric) for x in runs]) if len(runs) > 1 else (getattr(runs[0], metric), 0.0)
        cells.append(f"{m:8.2f}±{se:5.2f}")
    pcs = [np.mean([percent_change(getattr(x, k), getattr(y, k)) for x, y in zip(runs, base)])
           for k in ("private_vtt_h", "bus_vtt_h", "ptt_h")]
    print(f"{name:10s} {cells[0]:>16s} {cells[1]:>14s} {cells[2]:>14s}  {pcs[0]:+6.2f} {pcs[1]:+6.2f} {pcs[2]:+6.2f}")
