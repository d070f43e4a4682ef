"""Grid-world MDP for a single UAV collecting updates from fixed IoT devices.

The UAV hovers at a fixed altitude over an ``L x L`` area split into square
cells. Each slot it picks one device to serve and one of five moves. Serving a
device resets that device's age of information (AoI) to 1, every other age
grows by one up to ``a_max``. The served device pays the transmit power needed
to push an ``M``-bit packet over a line-of-sight link in one slot.

Everything here is deterministic given the config, the reset seed and the
action sequence.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Sequence

import numpy as np

from .errors import LifecycleError

N_MOVES = 5


class Move(IntEnum):
    NORTH = 0
    SOUTH = 1
    EAST = 2
    WEST = 3
    HOVER = 4


# (d_col, d_row); north increases the row index (y grows northwards)
_MOVE_DELTAS = {
    Move.NORTH: (0, 1),
    Move.SOUTH: (0, -1),
    Move.EAST: (1, 0),
    Move.WEST: (-1, 0),
    Move.HOVER: (0, 0),
}


def seed_words(*parts) -> list:
    """Flatten ints and nested int sequences into one seed list for ``np.random.default_rng``."""
    out = []
    for p in parts:
        if isinstance(p, (list, tuple, np.ndarray)):
            out.extend(seed_words(*p))
        else:
            out.append(int(p))
    return out


def random_device_positions(side_length_m: float, n_devices: int, seed) -> tuple:
    """Uniform device layout over the square, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    xy = rng.uniform(0.0, side_length_m, size=(n_devices, 2))
    return tuple((float(x), float(y)) for x, y in xy)


@dataclass(frozen=True)
class EnvConfig:
    """Geometry, radio constants and reward weights of one task.

    ``omega`` is either one weight shared by all devices or one per device.
    ``g0_db`` is the channel gain at 1 m; the default -30 dB is a 30 dB loss.
    """

    side_length_m: float = 1000.0
    cells_per_side: int = 10
    uav_altitude_m: float = 100.0
    g0_db: float = -30.0
    bandwidth_hz: float = 1e6
    packet_bits: float = 5e6
    noise_power_w: float = 1e-13
    a_max: int = 30
    omega: float | tuple = 1.0
    lambda_tradeoff: float = 0.0
    horizon: int = 100
    device_positions: tuple = field(default=((250.0, 250.0), (750.0, 750.0)))

    def __post_init__(self):
        positions = tuple(tuple(float(c) for c in p) for p in self.device_positions)
        object.__setattr__(self, "device_positions", positions)
        if not isinstance(self.omega, (int, float)):
            object.__setattr__(self, "omega", tuple(float(w) for w in self.omega))
        if self.cells_per_side < 2:
            raise ValueError("cells_per_side must be >= 2")
        if self.side_length_m <= 0:
            raise ValueError("side_length_m must be positive")
        if self.a_max < 1:
            raise ValueError("a_max must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.lambda_tradeoff < 0:
            raise ValueError("lambda_tradeoff must be >= 0")
        if self.noise_power_w <= 0 or self.bandwidth_hz <= 0:
            raise ValueError("noise_power_w and bandwidth_hz must be positive")
        if self.packet_bits < 0:
            raise ValueError("packet_bits must be >= 0")
        if len(positions) < 1:
            raise ValueError("at least one device is required")
        for x, y in positions:
            if not (0.0 <= x <= self.side_length_m and 0.0 <= y <= self.side_length_m):
                raise ValueError(f"device position {(x, y)} lies outside the grid")
        weights = self.omega_vector
        if len(weights) != len(positions) or np.any(weights <= 0):
            raise ValueError("omega must be positive, scalar or one per device")

    @property
    def d0_m(self) -> float:
        return self.side_length_m / self.cells_per_side

    @property
    def n_devices(self) -> int:
        return len(self.device_positions)

    @property
    def n_actions(self) -> int:
        return self.n_devices * N_MOVES

    @property
    def state_dim(self) -> int:
        return 2 + self.n_devices

    @property
    def n_cells(self) -> int:
        return self.cells_per_side**2

    @property
    def omega_vector(self) -> np.ndarray:
        if isinstance(self.omega, tuple):
            return np.asarray(self.omega, dtype=float)
        return np.full(len(self.device_positions), float(self.omega))

    @property
    def g0_linear(self) -> float:
        return 10.0 ** (self.g0_db / 10.0)

    @property
    def power_coefficient(self) -> float:
        """(2^(M/BW) - 1) * noise / g0, the watts-per-square-metre factor of the power model."""
        return (2.0 ** (self.packet_bits / self.bandwidth_hz) - 1.0) * self.noise_power_w / self.g0_linear

    def replace(self, **changes) -> "EnvConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class EnvState:
    uav_cell: tuple
    aoi: tuple
    step_count: int = 0


@dataclass(frozen=True)
class Action:
    device: int
    move: Move

    def encode(self) -> int:
        return int(self.device) * N_MOVES + int(self.move)

    @classmethod
    def decode(cls, index: int, n_devices: int) -> "Action":
        if not 0 <= index < n_devices * N_MOVES:
            raise ValueError(f"action index {index} out of range for {n_devices} devices")
        device, move = divmod(int(index), N_MOVES)
        return cls(device, Move(move))


@dataclass(frozen=True)
class StepOutcome:
    next_state: EnvState
    reward: float
    power_w: float
    mean_aoi: float
    done: bool


def _check_cell(cfg: EnvConfig, cell) -> tuple:
    col, row = int(cell[0]), int(cell[1])
    n = cfg.cells_per_side
    if not (0 <= col < n and 0 <= row < n):
        raise ValueError(f"cell {cell} outside a {n}x{n} grid")
    return col, row


def cell_center(cfg: EnvConfig, cell) -> tuple:
    col, row = _check_cell(cfg, cell)
    return (cfg.d0_m * (col + 0.5), cfg.d0_m * (row + 0.5))


def _check_device(cfg: EnvConfig, device: int) -> int:
    if not 0 <= device < cfg.n_devices:
        raise ValueError(f"device index {device} out of range [0, {cfg.n_devices})")
    return int(device)


def _squared_distance(cfg: EnvConfig, uav_xy, device: int) -> float:
    x, y = cfg.device_positions[_check_device(cfg, device)]
    return (uav_xy[0] - x) ** 2 + (uav_xy[1] - y) ** 2


def channel_gain(cfg: EnvConfig, uav_xy, device: int) -> float:
    """Line-of-sight gain ``g0 / (h^2 + r^2)`` between the UAV and a device."""
    r2 = _squared_distance(cfg, uav_xy, device)
    return cfg.g0_linear / (cfg.uav_altitude_m**2 + r2)


def transmit_power(cfg: EnvConfig, uav_xy, device: int) -> float:
    r2 = _squared_distance(cfg, uav_xy, device)
    return cfg.power_coefficient * (r2 + cfg.uav_altitude_m**2)


def update_aoi(aoi: Sequence[int], scheduled: int, a_max: int) -> tuple:
    if not 0 <= scheduled < len(aoi):
        raise ValueError(f"scheduled device {scheduled} out of range [0, {len(aoi)})")
    return tuple(1 if d == scheduled else min(a_max, a + 1) for d, a in enumerate(aoi))


def move_uav(cfg: EnvConfig, cell, move) -> tuple:
    """Shift one cell in the given direction; moves that would leave the grid hover instead."""
    col, row = _check_cell(cfg, cell)
    dc, dr = _MOVE_DELTAS[Move(move)]
    new_col, new_row = col + dc, row + dr
    n = cfg.cells_per_side
    if 0 <= new_col < n and 0 <= new_row < n:
        return (new_col, new_row)
    return (col, row)


def reward(cfg: EnvConfig, aoi_next: Sequence[float], powers_w: Sequence[float]) -> float:
    """Negative weighted mean age minus ``lambda`` times the total transmit power."""
    aoi_next = np.asarray(aoi_next, dtype=float)
    powers_w = np.asarray(powers_w, dtype=float)
    d = cfg.n_devices
    if aoi_next.shape != (d,) or powers_w.shape != (d,):
        raise ValueError(f"expected vectors of length {d}, got {aoi_next.shape} and {powers_w.shape}")
    return float(-(cfg.omega_vector @ aoi_next) / d - cfg.lambda_tradeoff * powers_w.sum())


def step(cfg: EnvConfig, state: EnvState, action) -> StepOutcome:
    """Advance one slot. ``action`` may be an :class:`Action` or its flat index.

    The scheduled device's power is measured from the UAV's post-move cell;
    only that device transmits, so the other power entries are zero.
    """
    if state.step_count >= cfg.horizon:
        raise LifecycleError("episode is finished; call reset() first")
    if not isinstance(action, Action):
        action = Action.decode(action, cfg.n_devices)
    device = _check_device(cfg, action.device)
    new_cell = move_uav(cfg, state.uav_cell, action.move)
    new_aoi = update_aoi(state.aoi, device, cfg.a_max)
    power = transmit_power(cfg, cell_center(cfg, new_cell), device)
    powers = np.zeros(cfg.n_devices)
    powers[device] = power
    r = reward(cfg, new_aoi, powers)
    next_state = EnvState(new_cell, new_aoi, state.step_count + 1)
    return StepOutcome(
        next_state=next_state,
        reward=r,
        power_w=power,
        mean_aoi=float(np.mean(new_aoi)),
        done=next_state.step_count == cfg.horizon,
    )


def reset(cfg: EnvConfig, seed) -> EnvState:
    """Uniformly random start cell, all ages set to 1."""
    rng = np.random.default_rng(seed)
    n = cfg.cells_per_side
    cell = int(rng.integers(n * n))
    return EnvState((cell % n, cell // n), (1,) * cfg.n_devices, 0)


def encode_state(cfg: EnvConfig, state: EnvState) -> np.ndarray:
    """Feature vector ``[col, row, A_1..A_D]`` scaled into [0, 1]."""
    scale = cfg.cells_per_side - 1
    out = np.empty(2 + cfg.n_devices)
    out[0] = state.uav_cell[0] / scale
    out[1] = state.uav_cell[1] / scale
    out[2:] = np.asarray(state.aoi, dtype=float) / cfg.a_max
    return out


def power_table(cfg: EnvConfig) -> np.ndarray:
    """Transmit power for every (cell index, device); cell index is ``row * n + col``."""
    n = cfg.cells_per_side
    centers = (np.arange(n) + 0.5) * cfg.d0_m
    xs = np.tile(centers, n)
    ys = np.repeat(centers, n)
    dev = np.asarray(cfg.device_positions)
    r2 = (xs[:, None] - dev[None, :, 0]) ** 2 + (ys[:, None] - dev[None, :, 1]) ** 2
    return cfg.power_coefficient * (r2 + cfg.uav_altitude_m**2)
