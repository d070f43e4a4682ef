"""
Training a DQN scheduler and comparing it with heuristics
=========================================================

A deep Q-network learns which device to serve and where to fly from the
(UAV cell, age vector) state. With a strong power weight it should learn to
hover near the cheap cell instead of chasing devices, something the
age-driven heuristics never do.

Run with ``python3 demos/02_dqn_against_baselines.py`` (a few seconds).
"""

from uavmeta import env as uav
from uavmeta import rl
from uavmeta.harness.baselines import BaselineKind, baseline_policy

cfg = uav.EnvConfig(cells_per_side=5, horizon=20, lambda_tradeoff=5e4)
hp = rl.DqnHyperparams(hidden_sizes=(64, 64), batch_size=32, lr=1e-3, reward_scale=0.01)

# train for 300 episodes; records hold one row per episode
agent = rl.make_agent(cfg, hp, seed=[0, 0])
_, records = rl.train_dqn(cfg, agent, episodes=300, seed=[0, 1], run_id="dqn")
for r in records[::50]:
    print(f"episode {r.index:3d}  epsilon {r.epsilon:.2f}  episode reward {r.reward:8.1f}")

# greedy evaluation on fresh seeds, next to the heuristics
print()
rows = [("dqn", rl.evaluate_policy(cfg, agent.arch, agent.online, episodes=20, seed=99))]
rows += [(k.value, rl.rollout(cfg, baseline_policy(k, cfg, seed=1), episodes=20, seed=99)) for k in BaselineKind]
for name, ev in rows:
    print(f"{name:14s} reward/slot {ev.mean_reward:8.3f}  mean AoI {ev.mean_aoi:.2f}  "
          f"mean power {ev.mean_power_w:.2e} W")
