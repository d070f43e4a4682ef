"""
Meta-learning an initialization for new trade-off weights
=========================================================

Each task is the same grid with its own device layout and power weight.
First-order MAML trains a shared initialization: every outer step copies it
into a few per-task agents, adapts them briefly, scores them on fresh greedy
episodes and moves the initialization along the summed query gradients.

At test time the learned initialization and a random one are fine-tuned for
the same small number of episodes on tasks never seen during training.

Run with ``python3 demos/03_meta_learning.py`` (well under a minute).
"""

import dataclasses

import numpy as np

from uavmeta import meta, nn
from uavmeta.harness.config import build_config

# the desk preset: 5x5 grid, 8 training and 11 test tasks, 500 outer steps
exp = build_config(None, preset="desk")
cfg = exp.meta_config()
train, test = meta.make_task_family(8, 11, exp.tasks.lambda_range, seed=0)
print("training lambdas:", [f"{t.lambda_tradeoff:g}" for t in train])
print("test lambdas:    ", [f"{t.lambda_tradeoff:g}" for t in test])


def progress(state):
    if state.epoch % 100 == 0:
        recent = np.mean(state.meta_loss_history[-100:])
        print(f"epoch {state.epoch:3d}  mean meta-loss over the last 100 epochs {recent:.3f}")


state, history = meta.meta_train(cfg, train, seed=0, on_epoch_end=progress)

# few-shot comparison on every unseen task, scored on three greedy episodes
shots = 30
test_cfg = dataclasses.replace(cfg, eval_episodes=3)
random_theta = nn.init_params(cfg.architecture(), 12345)
wins = 0
for task in test:
    learned = meta.meta_test(state.theta, task, shots, test_cfg, seed=[0, 1])[-1].mean_reward
    scratch = meta.meta_test(random_theta, task, shots, test_cfg, seed=[0, 1])[-1].mean_reward
    wins += learned > scratch
    print(f"lambda {task.lambda_tradeoff:8g}: reward/slot after {shots} shots  "
          f"meta-learned {learned:7.2f}   random {scratch:7.2f}")
print(f"meta-learned start ahead on {wins} of {len(test)} tasks (one seed; the acceptance test averages five)")
