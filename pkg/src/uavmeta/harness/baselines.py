"""Heuristic schedulers used as reference points next to learned policies.

Every baseline returns a ``policy(state) -> action index`` closure, the same
shape :func:`uavmeta.rl.rollout` expects. The scheduled device decides the
move: one greedy Manhattan step toward the cell that contains it.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .. import env as uav


class BaselineKind(str, Enum):
    ROUND_ROBIN = "round-robin"
    MAX_AGE_FIRST = "max-age-first"
    RANDOM = "random"


def device_cell(cfg: uav.EnvConfig, device: int) -> tuple:
    """Grid cell containing a device (devices on the far edge belong to the last cell)."""
    x, y = cfg.device_positions[device]
    last = cfg.cells_per_side - 1
    return (min(int(x // cfg.d0_m), last), min(int(y // cfg.d0_m), last))


def step_toward(cell, target) -> uav.Move:
    """Move that shrinks the larger of the column / row gaps; hover once there."""
    dc, dr = target[0] - cell[0], target[1] - cell[1]
    if dc == 0 and dr == 0:
        return uav.Move.HOVER
    if abs(dc) >= abs(dr):
        return uav.Move.EAST if dc > 0 else uav.Move.WEST
    return uav.Move.NORTH if dr > 0 else uav.Move.SOUTH


def baseline_policy(kind, cfg: uav.EnvConfig, seed=0):
    """Policy closure for ``kind``.

    ``round-robin`` serves devices 0, 1, ..., D-1, 0, ... by slot index;
    ``max-age-first`` serves the oldest device (lowest index on ties);
    ``random`` draws device and move uniformly from its own seeded stream.
    """
    kind = BaselineKind(kind)
    targets = [device_cell(cfg, d) for d in range(cfg.n_devices)]

    def act(device: int, state: uav.EnvState) -> int:
        return uav.Action(device, step_toward(state.uav_cell, targets[device])).encode()

    if kind is BaselineKind.ROUND_ROBIN:
        return lambda state: act(state.step_count % cfg.n_devices, state)
    if kind is BaselineKind.MAX_AGE_FIRST:
        return lambda state: act(int(np.argmax(state.aoi)), state)
    rng = np.random.default_rng(seed)
    return lambda state: int(rng.integers(cfg.n_actions))
