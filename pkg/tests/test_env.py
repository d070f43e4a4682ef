import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import next_cell, one_step_reward, power_watts
from uavmeta import env as uav
from uavmeta.errors import LifecycleError

BASE = uav.EnvConfig()


def small(**kw):
    return uav.EnvConfig(side_length_m=kw.pop("side_length_m", 100.0), cells_per_side=kw.pop("cells_per_side", 2),
                         device_positions=kw.pop("device_positions", ((20.0, 30.0), (90.0, 60.0))), **kw)


# ---------------------------------------------------------------- geometry

@pytest.mark.parametrize("cfg,cell,expected", [
    (BASE, (0, 0), (50.0, 50.0)),
    (BASE, (4, 5), (450.0, 550.0)),
    (uav.EnvConfig(side_length_m=100.0, cells_per_side=2, device_positions=((10.0, 10.0),)), (1, 1), (75.0, 75.0)),
])
def test_cell_center(cfg, cell, expected):
    assert uav.cell_center(cfg, cell) == expected


def test_cell_center_rejects_outside_cells():
    with pytest.raises(ValueError):
        uav.cell_center(BASE, (10, 0))
    with pytest.raises(ValueError):
        uav.cell_center(BASE, (0, -1))


def test_d0_is_exact():
    assert uav.EnvConfig(side_length_m=1000.0, cells_per_side=7).d0_m == 1000.0 / 7


# ---------------------------------------------------------------- radio model

def test_channel_gain_at_zero_distance():
    assert uav.channel_gain(BASE, (250.0, 250.0), 0) == pytest.approx(1e-7, rel=1e-12)


def test_channel_gain_off_axis():
    # r^2 = 100^2 + 100^2 = 2e4
    assert uav.channel_gain(BASE, (350.0, 350.0), 0) == pytest.approx(1e-3 / 3e4, rel=1e-12)


def test_channel_gain_unit_reference():
    cfg = BASE.replace(g0_db=0.0, uav_altitude_m=1.0)
    assert uav.channel_gain(cfg, (250.0, 250.0), 0) == pytest.approx(1.0, rel=1e-12)


def test_transmit_power_reference_values():
    assert uav.transmit_power(BASE, (250.0, 250.0), 0) == pytest.approx(3.1e-5, rel=1e-12)
    assert uav.transmit_power(BASE, (350.0, 350.0), 0) == pytest.approx(9.3e-5, rel=1e-12)


def test_transmit_power_matches_inverse_gain():
    xy = (123.0, 456.0)
    g = uav.channel_gain(BASE, xy, 1)
    expected = 31 * BASE.noise_power_w / g
    assert uav.transmit_power(BASE, xy, 1) == pytest.approx(expected, rel=1e-12)


def test_zero_packet_needs_no_power():
    cfg = BASE.replace(packet_bits=0.0)
    for xy in [(0.0, 0.0), (999.0, 3.0), (250.0, 250.0)]:
        assert uav.transmit_power(cfg, xy, 0) == 0.0


@given(st.floats(0, 1000), st.floats(0, 1000), st.integers(0, 1))
def test_transmit_power_matches_oracle(x, y, device):
    dx, dy = BASE.device_positions[device]
    r2 = (x - dx) ** 2 + (y - dy) ** 2
    expected = power_watts(5e6, 1e6, 1e-13, -30.0, 100.0, r2)
    assert uav.transmit_power(BASE, (x, y), device) == pytest.approx(expected, rel=1e-12)


@given(st.floats(0, 700), st.floats(0.001, 300))
def test_power_strictly_increasing_in_distance(r, dr):
    near = uav.transmit_power(BASE, (250.0 + r, 250.0), 0)
    far = uav.transmit_power(BASE, (250.0 + r + dr, 250.0), 0)
    assert far > near
    assert uav.channel_gain(BASE, (250.0 + r + dr, 250.0), 0) <= uav.channel_gain(BASE, (250.0 + r, 250.0), 0)


def test_power_table_matches_pointwise():
    cfg = small(cells_per_side=3)
    table = uav.power_table(cfg)
    for row in range(3):
        for col in range(3):
            for d in range(cfg.n_devices):
                expected = uav.transmit_power(cfg, uav.cell_center(cfg, (col, row)), d)
                assert table[row * 3 + col, d] == pytest.approx(expected, rel=1e-12)


# ---------------------------------------------------------------- AoI and movement

@pytest.mark.parametrize("aoi,scheduled,a_max,expected", [
    ([3, 5], 0, 30, (1, 6)),
    ([30, 29], 1, 30, (30, 1)),
    ([1], 0, 30, (1,)),
])
def test_update_aoi(aoi, scheduled, a_max, expected):
    assert uav.update_aoi(aoi, scheduled, a_max) == expected


def test_update_aoi_rejects_bad_device():
    with pytest.raises(ValueError):
        uav.update_aoi([1, 2], 2, 30)


@pytest.mark.parametrize("cell,move,expected", [
    ((4, 5), uav.Move.EAST, (5, 5)),
    ((9, 5), uav.Move.EAST, (9, 5)),
    ((3, 3), uav.Move.HOVER, (3, 3)),
    ((3, 3), uav.Move.NORTH, (3, 4)),
    ((3, 3), uav.Move.SOUTH, (3, 2)),
    ((3, 3), uav.Move.WEST, (2, 3)),
    ((0, 0), uav.Move.SOUTH, (0, 0)),
    ((0, 9), uav.Move.NORTH, (0, 9)),
])
def test_move_uav(cell, move, expected):
    assert uav.move_uav(BASE, cell, move) == expected


@given(st.integers(0, 9), st.integers(0, 9), st.sampled_from(list(uav.Move)))
def test_moves_never_leave_grid(col, row, move):
    c, r = uav.move_uav(BASE, (col, row), move)
    assert 0 <= c < 10 and 0 <= r < 10
    assert (c, r) == next_cell(col, row, int(move), 10)


@given(st.integers(1, 8), st.integers(1, 8))
def test_opposite_moves_cancel_away_from_edges(col, row):
    for there, back in [(uav.Move.NORTH, uav.Move.SOUTH), (uav.Move.EAST, uav.Move.WEST)]:
        assert uav.move_uav(BASE, uav.move_uav(BASE, (col, row), there), back) == (col, row)


# ---------------------------------------------------------------- reward

def test_reward_examples():
    assert uav.reward(BASE.replace(lambda_tradeoff=300.0), [3, 5], [3.1e-5, 0.0]) == pytest.approx(-4.0093, rel=1e-12)
    five = uav.EnvConfig(device_positions=tuple((100.0 * i, 0.0) for i in range(5)))
    assert uav.reward(five, [1] * 5, [0.0] * 5) == -1.0
    one = uav.EnvConfig(device_positions=((1.0, 1.0),), omega=2.0, lambda_tradeoff=1.0)
    assert uav.reward(one, [10], [0.5]) == pytest.approx(-20.5, rel=1e-12)


def test_reward_rejects_length_mismatch():
    with pytest.raises(ValueError):
        uav.reward(BASE, [1, 2, 3], [0.0, 0.0])


@given(st.lists(st.integers(1, 30), min_size=2, max_size=2), st.floats(0, 1e6), st.floats(0, 1.0),
       st.floats(0.1, 5.0))
def test_reward_upper_bound(aoi, lam, power, omega):
    cfg = BASE.replace(lambda_tradeoff=lam, omega=omega)
    assert uav.reward(cfg, aoi, [power, 0.0]) <= -omega + 1e-12


def test_per_device_weights():
    cfg = BASE.replace(omega=(1.0, 3.0))
    assert uav.reward(cfg, [2, 4], [0.0, 0.0]) == pytest.approx(-(2 + 12) / 2)


# ---------------------------------------------------------------- step / reset / encoding

def test_step_example_and_determinism():
    state = uav.EnvState((3, 3), (3, 5), 0)
    a = uav.Action(0, uav.Move.HOVER)
    first = uav.step(BASE, state, a)
    second = uav.step(BASE, state, a)
    assert first == second
    assert first.next_state.aoi == (1, 6)
    assert first.next_state.uav_cell == (3, 3)
    assert uav.step(BASE, state, a.encode()) == first


def test_exhaustive_one_step_rewards_on_2x2_grid():
    cfg = small(lambda_tradeoff=1e4)
    aoi = (2, 4)
    n = 2
    for col in range(n):
        for row in range(n):
            for device in range(2):
                for move in range(5):
                    out = uav.step(cfg, uav.EnvState((col, row), aoi, 0), device * 5 + move)
                    c, r = next_cell(col, row, move, n)
                    assert out.next_state.uav_cell == (c, r)
                    x, y = 25.0 + 50.0 * c, 25.0 + 50.0 * r
                    dx, dy = cfg.device_positions[device]
                    p = power_watts(5e6, 1e6, 1e-13, -30.0, 100.0, (x - dx) ** 2 + (y - dy) ** 2)
                    next_aoi = [1 if d == device else a + 1 for d, a in enumerate(aoi)]
                    assert out.reward == pytest.approx(one_step_reward(1.0, next_aoi, 1e4, p), rel=1e-12)
                    assert out.power_w == pytest.approx(p, rel=1e-12)


def test_done_flag_and_lifecycle():
    cfg = small(horizon=2)
    s = uav.reset(cfg, 0)
    o1 = uav.step(cfg, s, 0)
    assert not o1.done
    o2 = uav.step(cfg, o1.next_state, 0)
    assert o2.done and o2.next_state.step_count == 2
    with pytest.raises(LifecycleError):
        uav.step(cfg, o2.next_state, 0)


def test_reset_is_seeded_and_starts_fresh():
    assert uav.reset(BASE, 42) == uav.reset(BASE, 42)
    s = uav.reset(BASE, 7)
    assert s.aoi == (1, 1) and s.step_count == 0


def test_reset_start_cells_are_uniform():
    counts = np.zeros(100)
    for i in range(10_000):
        col, row = uav.reset(BASE, [3, i]).uav_cell
        counts[row * 10 + col] += 1
    sigma = math.sqrt(10_000 * 0.01 * 0.99)
    assert np.all(np.abs(counts - 100) < 5 * sigma)


def test_encode_state_extremes():
    d5 = uav.EnvConfig(device_positions=tuple((10.0 * i, 0.0) for i in range(5)))
    np.testing.assert_array_equal(uav.encode_state(d5, uav.EnvState((0, 0), (30,) * 5)), [0, 0, 1, 1, 1, 1, 1])
    np.testing.assert_allclose(uav.encode_state(d5, uav.EnvState((9, 9), (1,) * 5)), [1, 1] + [1 / 30] * 5)
    assert uav.encode_state(BASE, uav.reset(BASE, 0)).shape == (BASE.state_dim,)


def test_action_encoding_is_a_bijection():
    d = 3
    seen = set()
    for idx in range(d * 5):
        a = uav.Action.decode(idx, d)
        assert a.encode() == idx
        seen.add((a.device, a.move))
    assert len(seen) == d * 5
    with pytest.raises(ValueError):
        uav.Action.decode(d * 5, d)


@pytest.mark.parametrize("kwargs", [
    {"cells_per_side": 1}, {"a_max": 0}, {"horizon": 0}, {"lambda_tradeoff": -1.0}, {"omega": 0.0},
    {"noise_power_w": 0.0}, {"bandwidth_hz": -1.0}, {"device_positions": ((1200.0, 5.0),)},
    {"omega": (1.0, 2.0, 3.0)},
])
def test_config_invariants(kwargs):
    with pytest.raises(ValueError):
        uav.EnvConfig(**kwargs)


actions = st.lists(st.integers(0, 9), min_size=1, max_size=60)


@given(actions, st.integers(0, 2**31))
def test_trajectory_invariants(seq, seed):
    cfg = BASE.replace(cells_per_side=4, a_max=5, horizon=60, lambda_tradeoff=1e4)
    state = uav.reset(cfg, seed)
    rewards, aoi_terms, power_terms = [], [], []
    for a in seq:
        out = uav.step(cfg, state, a)
        nxt = out.next_state.aoi
        assert all(1 <= v <= cfg.a_max for v in nxt)
        assert sum(v == 1 for v in nxt) == 1
        assert nxt[a // 5] == 1
        rewards.append(out.reward)
        aoi_terms.append(np.mean(nxt))
        power_terms.append(out.power_w)
        state = out.next_state
    # minus the mean reward is the time-averaged mean age plus lambda times the mean scheduled power
    objective = np.mean(aoi_terms) + cfg.lambda_tradeoff * np.mean(power_terms)
    assert -np.mean(rewards) == pytest.approx(objective, rel=1e-12)


@given(actions, st.integers(0, 2**31))
def test_trajectories_are_reproducible(seq, seed):
    def run():
        s = uav.reset(BASE, seed)
        outs = []
        for a in seq:
            o = uav.step(BASE, s, a)
            outs.append(o)
            s = o.next_state
        return outs
    assert run() == run()
