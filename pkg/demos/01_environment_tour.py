"""
A walk through the UAV scheduling environment
=============================================

One UAV flies over a square grid and, in every slot, picks one ground device
to upload a fresh packet. Serving a device resets its age of information to 1;
every other device ages by one slot. The uplink power the served device needs
grows with its squared distance to the UAV, so the reward trades age against
power through a single weight ``lambda``.

Run with ``python3 demos/01_environment_tour.py``.
"""

import numpy as np

from uavmeta import env as uav
from uavmeta import rl
from uavmeta.harness.baselines import BaselineKind, baseline_policy

# a 5x5 grid over a 1 km square, two devices in opposite quadrants
cfg = uav.EnvConfig(cells_per_side=5, horizon=20, lambda_tradeoff=0.0)
print(f"cell size {cfg.d0_m:.0f} m, {cfg.n_devices} devices, {cfg.n_actions} actions")

# the power table lists the uplink power each device needs from each cell
n = cfg.cells_per_side
table = uav.power_table(cfg)
print("power from every cell for device 0 (W), row 0 at the bottom:")
print(np.array2string(table[:, 0].reshape(n, n)[::-1], precision=6))

# one episode by hand: serve device 0 while flying east
state = uav.reset(cfg, seed=0)
print("\nstart cell", state.uav_cell, "ages", state.aoi)
for _ in range(3):
    out = uav.step(cfg, state, uav.Action(0, uav.Move.EAST).encode())
    print(f"cell {out.next_state.uav_cell} ages {out.next_state.aoi} reward {out.reward:.4f} "
          f"power {out.power_w:.2e} W")
    state = out.next_state

# the heuristic schedulers give reference points for learned policies
for lam in (0.0, 5e4):
    env_cfg = cfg.replace(lambda_tradeoff=lam)
    print(f"\nlambda = {lam:g}")
    for kind in BaselineKind:
        ev = rl.rollout(env_cfg, baseline_policy(kind, env_cfg, seed=1), episodes=20, seed=7)
        print(f"  {kind.value:14s} mean AoI {ev.mean_aoi:.2f}  mean power {ev.mean_power_w:.2e} W  "
              f"return {ev.mean_return:.2f}")
