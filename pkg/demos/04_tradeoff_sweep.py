"""
The age/power trade-off across lambda
=====================================

The experiment harness trains one agent per test weight and records the
greedy policy's mean age and mean transmit power, then renders the points as
an SVG scatter. Small weights buy fresh data with power; large weights park
the UAV where uploads are cheap and let ages grow.

This is the same run as ``uavmeta --desk-scale --out runs/demo-sweep sweep``
followed by ``uavmeta plot runs/demo-sweep/sweep.csv --out runs/demo-sweep``.
Run with ``python3 demos/04_tradeoff_sweep.py`` (about half a minute).
"""

from uavmeta.harness.config import build_config
from uavmeta.harness.experiments import read_sweep_points, run_experiment
from uavmeta.harness.plots import emit_plots
from uavmeta.metrics import read_metrics_csv

cfg = build_config(None, preset="desk", overrides={"mode": "sweep", "output_dir": "runs/demo-sweep"})
result = run_experiment(cfg)

print(f"{'lambda':>10s} {'mean AoI':>9s} {'mean power (W)':>15s}")
for lam, aoi, power in read_sweep_points(read_metrics_csv(result.artifacts["sweep"])):
    print(f"{lam:10g} {aoi:9.2f} {power:15.3e}")

svg = emit_plots([result.artifacts["sweep"]], result.output_dir)[0]
print("\nscatter written to", svg)
print("manifest:", result.artifacts["manifest"])
