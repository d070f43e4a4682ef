"""Per-task reinforcement learning.

Deep Q-learning with a replay buffer and a periodically copied target network,
plus two exact tools for small instances: tabular Q-learning and value
iteration over the fully enumerated state space.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from . import env as uav
from . import nn
from .errors import CapacityError, ConstraintError, LifecycleError
from .metrics import MetricsRecord


class Transition(NamedTuple):
    state_features: np.ndarray
    action_index: int
    reward: float
    next_state_features: np.ndarray
    done: bool


class TransitionBatch(NamedTuple):
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    def __len__(self):
        return len(self.actions)

    @classmethod
    def from_transitions(cls, transitions) -> "TransitionBatch":
        transitions = list(transitions)
        return cls(
            np.array([t.state_features for t in transitions], dtype=float),
            np.array([t.action_index for t in transitions], dtype=np.int64),
            np.array([t.reward for t in transitions], dtype=float),
            np.array([t.next_state_features for t in transitions], dtype=float),
            np.array([t.done for t in transitions], dtype=bool),
        )


class ReplayBuffer:
    """Bounded FIFO of transitions backed by preallocated arrays.

    Storage is allocated on the first push, once the feature length is known.
    """

    def __init__(self, capacity: int = 100_000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self._size = 0
        self._next = 0
        self._states = None

    def __len__(self):
        return self._size

    def _allocate(self, dim: int):
        self._states = np.empty((self.capacity, dim))
        self._next_states = np.empty((self.capacity, dim))
        self._actions = np.empty(self.capacity, dtype=np.int64)
        self._rewards = np.empty(self.capacity)
        self._dones = np.empty(self.capacity, dtype=bool)

    def push(self, transition: Transition) -> None:
        if self._states is None:
            self._allocate(len(transition.state_features))
        i = self._next
        self._states[i] = transition.state_features
        self._actions[i] = transition.action_index
        self._rewards[i] = transition.reward
        self._next_states[i] = transition.next_state_features
        self._dones[i] = transition.done
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def _order(self) -> np.ndarray:
        """Storage slots from oldest to newest."""
        start = self._next if self._size == self.capacity else 0
        return (start + np.arange(self._size)) % self.capacity

    def transitions(self) -> list:
        return [Transition(self._states[i].copy(), int(self._actions[i]), float(self._rewards[i]),
                           self._next_states[i].copy(), bool(self._dones[i])) for i in self._order()]

    def _gather(self, idx) -> TransitionBatch:
        return TransitionBatch(self._states[idx], self._actions[idx], self._rewards[idx],
                               self._next_states[idx], self._dones[idx])

    def sample(self, batch_size: int, rng: np.random.Generator) -> TransitionBatch:
        """Uniform sample with replacement."""
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self._size < batch_size:
            raise LifecycleError(f"buffer holds {self._size} transitions, {batch_size} requested")
        return self._gather(rng.integers(self._size, size=batch_size))

    def all(self) -> TransitionBatch:
        if self._size == 0:
            raise LifecycleError("buffer is empty")
        return self._gather(self._order())


@dataclass(frozen=True)
class DqnHyperparams:
    gamma: float = 0.99
    lr: float = 1e-4
    batch_size: int = 64
    target_update_interval: int = 100
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.5
    buffer_capacity: int = 100_000
    hidden_sizes: tuple = (256, 256)
    # zero the bootstrap term on the last slot of an episode
    mask_terminal: bool = True
    # "adam" or plain "sgd" for the online-network update
    optimizer: str = "adam"
    # rewards are multiplied by this inside TD targets; greedy policies are unaffected
    reward_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1 or self.target_update_interval < 1 or self.buffer_capacity < 1:
            raise ValueError("batch_size, target_update_interval and buffer_capacity must be >= 1")
        if not 0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0:
            raise ValueError("need 0 <= epsilon_end <= epsilon_start <= 1")
        if not 0.0 <= self.epsilon_decay_fraction <= 1.0:
            raise ValueError("epsilon_decay_fraction must lie in [0, 1]")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        if self.reward_scale <= 0:
            raise ValueError("reward_scale must be positive")

    def architecture(self, env_cfg: uav.EnvConfig) -> nn.MlpArchitecture:
        return nn.MlpArchitecture.for_env(env_cfg.state_dim, env_cfg.n_actions, self.hidden_sizes)


@dataclass
class DqnAgent:
    arch: nn.MlpArchitecture
    online: np.ndarray
    target: np.ndarray
    adam: nn.AdamState
    buffer: ReplayBuffer
    hp: DqnHyperparams
    rng: np.random.Generator
    steps_done: int = 0
    updates_done: int = 0
    episodes_done: int = 0
    # few-shot budget: total training episodes this agent may ever run
    e_max: int | None = None
    losses: list = field(default_factory=list)


def make_agent(env_cfg: uav.EnvConfig, hp: DqnHyperparams, seed, params=None, e_max=None) -> DqnAgent:
    """Fresh agent with its own buffer and optimizer; ``params`` (copied) overrides the random init."""
    init_seed, rng_seed = np.random.SeedSequence(seed).spawn(2)
    arch = hp.architecture(env_cfg)
    if params is None:
        online = nn.init_params(arch, init_seed)
    else:
        online = np.array(params, dtype=np.float64, copy=True)
        if online.shape != (arch.n_params,):
            raise ValueError("initial parameters do not match the network architecture")
    return DqnAgent(
        arch=arch,
        online=online,
        target=online.copy(),
        adam=nn.AdamState.zeros(arch.n_params),
        buffer=ReplayBuffer(hp.buffer_capacity),
        hp=hp,
        rng=np.random.default_rng(rng_seed),
        e_max=e_max,
    )


def epsilon_at(hp: DqnHyperparams, episode: int, total_episodes: int) -> float:
    """Linear decay over the first ``epsilon_decay_fraction`` of the run, flat afterwards."""
    if episode > total_episodes:
        raise ValueError("episode exceeds total_episodes")
    decay_episodes = hp.epsilon_decay_fraction * total_episodes
    if decay_episodes <= 0 or episode >= decay_episodes:
        return hp.epsilon_end
    frac = episode / decay_episodes
    return hp.epsilon_start + frac * (hp.epsilon_end - hp.epsilon_start)


def greedy_action(q_values) -> int:
    # np.argmax returns the first maximum, i.e. ties go to the lowest index
    return int(np.argmax(q_values))


def select_action(agent: DqnAgent, state_features, epsilon: float) -> int:
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if epsilon > 0.0 and agent.rng.random() < epsilon:
        return int(agent.rng.integers(agent.arch.n_outputs))
    return greedy_action(nn.forward(agent.arch, agent.online, state_features))


def td_targets(arch, target_params, batch: TransitionBatch, gamma: float, mask_terminal: bool = True,
               reward_scale: float = 1.0) -> np.ndarray:
    next_q = nn.forward(arch, target_params, batch.next_states).max(axis=1)
    if mask_terminal:
        next_q = np.where(batch.dones, 0.0, next_q)
    return reward_scale * batch.rewards + gamma * next_q


def td_loss(arch, params, target_params, batch: TransitionBatch, gamma: float, mask_terminal: bool = True,
            reward_scale: float = 1.0) -> tuple:
    """Mean squared TD error and its gradient with respect to ``params`` only.

    Targets come from ``target_params`` and are treated as constants.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    y = td_targets(arch, target_params, batch, gamma, mask_terminal, reward_scale)
    trace = nn.forward_trace(arch, params, batch.states)
    rows = np.arange(len(batch))
    err = trace[-1][rows, batch.actions] - y
    grad_out = np.zeros_like(trace[-1])
    grad_out[rows, batch.actions] = 2.0 * err
    grad = nn.backward(arch, params, batch.states, grad_out, trace=trace)
    return float(np.mean(err**2)), grad


def train_dqn(env_cfg: uav.EnvConfig, agent: DqnAgent, episodes: int, horizon=None, seed=0,
              run_id: str = "dqn", schedule_length=None,
              on_episode_end: Callable | None = None) -> tuple:
    """Run the deep Q-learning loop for ``episodes`` episodes, mutating ``agent``.

    Exploration follows :func:`epsilon_at` with the agent's lifetime episode count
    measured against ``schedule_length`` (default: this call's length), so
    training in several chunks matches one long call. One Adam update happens
    per environment step once the buffer holds a full mini-batch.

    Returns ``(agent, records)`` with one :class:`MetricsRecord` per episode
    whose ``reward`` is the episode's total reward.
    """
    if episodes < 0:
        raise ValueError("episodes must be >= 0")
    if agent.e_max is not None and agent.episodes_done + episodes > agent.e_max:
        raise ConstraintError(
            f"training {episodes} more episodes would exceed the budget of {agent.e_max} "
            f"({agent.episodes_done} already used)")
    cfg = env_cfg if horizon is None else env_cfg.replace(horizon=int(horizon))
    hp = agent.hp
    total = schedule_length if schedule_length is not None else agent.episodes_done + episodes
    records = []
    for _ in range(episodes):
        t0 = time.perf_counter()
        ep = agent.episodes_done
        eps = epsilon_at(hp, min(ep, total), total)
        state = uav.reset(cfg, uav.seed_words(seed, ep))
        feats = uav.encode_state(cfg, state)
        total_reward = aoi_sum = power_sum = 0.0
        done = False
        while not done:
            action = select_action(agent, feats, eps)
            out = uav.step(cfg, state, action)
            next_feats = uav.encode_state(cfg, out.next_state)
            agent.buffer.push(Transition(feats, action, out.reward, next_feats, out.done))
            agent.steps_done += 1
            total_reward += out.reward
            aoi_sum += out.mean_aoi
            power_sum += out.power_w
            if len(agent.buffer) >= hp.batch_size:
                _update(agent)
            state, feats, done = out.next_state, next_feats, out.done
        agent.episodes_done += 1
        steps = cfg.horizon
        rec = MetricsRecord(run_id, "train", ep, total_reward, aoi_sum / steps, power_sum / steps,
                            None, eps, time.perf_counter() - t0)
        records.append(rec)
        if on_episode_end is not None:
            on_episode_end(agent, rec)
    return agent, records


def _update(agent: DqnAgent) -> None:
    hp = agent.hp
    batch = agent.buffer.sample(hp.batch_size, agent.rng)
    loss, grad = td_loss(agent.arch, agent.online, agent.target, batch, hp.gamma, hp.mask_terminal,
                         hp.reward_scale)
    if hp.optimizer == "adam":
        agent.online, agent.adam = nn.adam_step(agent.online, grad, agent.adam, hp.lr)
    else:
        agent.online = nn.sgd_step(agent.online, grad, hp.lr)
    agent.updates_done += 1
    agent.losses.append(loss)
    if agent.updates_done % hp.target_update_interval == 0:
        agent.target = agent.online.copy()


@dataclass(frozen=True)
class Evaluation:
    """Greedy rollout summary. Per-step means pool every slot of every episode."""

    mean_reward: float
    mean_aoi: float
    mean_power_w: float
    mean_return: float
    mean_episode_reward: float
    episodes: int

    def to_record(self, run_id: str, phase: str, index: int, wall_time_s: float = 0.0) -> MetricsRecord:
        return MetricsRecord(run_id, phase, index, self.mean_reward, self.mean_aoi, self.mean_power_w,
                             None, 0.0, wall_time_s)


def rollout(env_cfg: uav.EnvConfig, policy: Callable, episodes: int, seed=0, gamma: float = 0.99) -> Evaluation:
    """Run ``policy(state) -> action index`` for whole episodes starting from seeded resets."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    rewards, aois, powers, returns, totals = [], [], [], [], []
    for ep in range(episodes):
        state = uav.reset(env_cfg, uav.seed_words(seed, ep))
        g, discount, total = 0.0, 1.0, 0.0
        done = False
        while not done:
            out = uav.step(env_cfg, state, policy(state))
            rewards.append(out.reward)
            aois.append(out.mean_aoi)
            powers.append(out.power_w)
            g += discount * out.reward
            discount *= gamma
            total += out.reward
            state, done = out.next_state, out.done
        returns.append(g)
        totals.append(total)
    return Evaluation(float(np.mean(rewards)), float(np.mean(aois)), float(np.mean(powers)),
                      float(np.mean(returns)), float(np.mean(totals)), episodes)


def q_policy(env_cfg: uav.EnvConfig, arch: nn.MlpArchitecture, params: np.ndarray) -> Callable:
    def policy(state):
        return greedy_action(nn.forward(arch, params, uav.encode_state(env_cfg, state)))
    return policy


def evaluate_policy(env_cfg: uav.EnvConfig, arch: nn.MlpArchitecture, params: np.ndarray,
                    episodes: int = 1, seed=0, gamma: float = 0.99) -> Evaluation:
    """Greedy (epsilon = 0) evaluation of a Q-network; never modifies ``params``."""
    return rollout(env_cfg, q_policy(env_cfg, arch, params), episodes, seed, gamma)


# --------------------------------------------------------------------------
# exact small-instance tools

MAX_TABULAR_STATES = 1_000_000


class StateSpace:
    """Enumeration of (cell, AoI vector) states.

    Index = cell * a_max**D + sum_d (A_d - 1) * a_max**d, with cell = row * n + col.
    """

    def __init__(self, cfg: uav.EnvConfig, max_states: int = MAX_TABULAR_STATES):
        self.cfg = cfg
        self.n_aoi = cfg.a_max ** cfg.n_devices
        self.n_states = cfg.n_cells * self.n_aoi
        if self.n_states > max_states:
            raise CapacityError(f"{self.n_states} states exceed the tabular limit of {max_states}")
        self._radix = cfg.a_max ** np.arange(cfg.n_devices)

    def index(self, state: uav.EnvState) -> int:
        col, row = state.uav_cell
        cell = row * self.cfg.cells_per_side + col
        return int(cell * self.n_aoi + np.dot(np.asarray(state.aoi) - 1, self._radix))

    def state(self, index: int) -> uav.EnvState:
        cell, rest = divmod(int(index), self.n_aoi)
        aoi = tuple(int(v) + 1 for v in (rest // self._radix) % self.cfg.a_max)
        n = self.cfg.cells_per_side
        return uav.EnvState((cell % n, cell // n), aoi, 0)

    def model(self) -> tuple:
        """Vectorized one-step model: ``(next_index, reward)``, both shaped (states, actions)."""
        cfg = self.cfg
        n, d, a_max = cfg.cells_per_side, cfg.n_devices, cfg.a_max
        cells = np.arange(cfg.n_cells)
        cols, rows = cells % n, cells // n
        next_cell = np.empty((cfg.n_cells, uav.N_MOVES), dtype=np.int64)
        for m in uav.Move:
            dc, dr = uav._MOVE_DELTAS[m]
            nc, nr = cols + dc, rows + dr
            inside = (nc >= 0) & (nc < n) & (nr >= 0) & (nr < n)
            next_cell[:, m] = np.where(inside, nr * n + nc, cells)

        aoi = (np.arange(self.n_aoi)[:, None] // self._radix[None, :]) % a_max + 1
        next_aoi_idx = np.empty((self.n_aoi, d), dtype=np.int64)
        next_aoi_cost = np.empty((self.n_aoi, d))
        omega = cfg.omega_vector
        for dev in range(d):
            nxt = np.minimum(aoi + 1, a_max)
            nxt[:, dev] = 1
            next_aoi_idx[:, dev] = (nxt - 1) @ self._radix
            next_aoi_cost[:, dev] = nxt @ omega / d
        power = uav.power_table(cfg)

        n_actions = cfg.n_actions
        next_index = np.empty((self.n_states, n_actions), dtype=np.int64)
        rewards = np.empty((self.n_states, n_actions))
        for dev in range(d):
            for m in range(uav.N_MOVES):
                a = dev * uav.N_MOVES + m
                nc = next_cell[:, m]
                next_index[:, a] = (nc[:, None] * self.n_aoi + next_aoi_idx[None, :, dev]).ravel()
                rewards[:, a] = (-next_aoi_cost[None, :, dev]
                                 - cfg.lambda_tradeoff * power[nc, dev][:, None]).ravel()
        return next_index, rewards


def table_policy(space: StateSpace, actions: np.ndarray) -> Callable:
    def policy(state):
        return int(actions[space.index(state)])
    return policy


def value_iteration(env_cfg: uav.EnvConfig, gamma: float = 0.99, tol: float = 1e-10,
                    max_iter: int = 1_000_000) -> tuple:
    """Bellman optimality backups until the sup-norm change drops below ``tol``.

    Returns ``(values, policy)`` indexed by :class:`StateSpace`; the policy picks
    the lowest-index maximizing action.
    """
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    space = StateSpace(env_cfg)
    next_index, rewards = space.model()
    values = np.zeros(space.n_states)
    for _ in range(max_iter):
        new_values = (rewards + gamma * values[next_index]).max(axis=1)
        delta = np.max(np.abs(new_values - values))
        values = new_values
        if delta < tol:
            break
    q = rewards + gamma * values[next_index]
    return values, np.argmax(q, axis=1)


@dataclass(frozen=True)
class TabularParams:
    alpha: float = 1e-4
    gamma: float = 0.99
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.5
    # the tabular oracle treats episodes as slices of a continuing task by default
    mask_terminal: bool = False


def tabular_q_learning(env_cfg: uav.EnvConfig, params: TabularParams, episodes: int, seed=0) -> np.ndarray:
    """Epsilon-greedy Q-learning on the simulator; returns the (states, actions) Q-table."""
    space = StateSpace(env_cfg)
    q = np.zeros((space.n_states, env_cfg.n_actions))
    rng = np.random.default_rng(seed)
    n_actions = env_cfg.n_actions
    for ep in range(episodes):
        eps = epsilon_at(params, ep, episodes)
        state = uav.reset(env_cfg, uav.seed_words(seed, ep))
        s = space.index(state)
        done = False
        while not done:
            if eps > 0.0 and rng.random() < eps:
                a = int(rng.integers(n_actions))
            else:
                a = greedy_action(q[s])
            out = uav.step(env_cfg, state, a)
            s_next = space.index(out.next_state)
            bootstrap = 0.0 if (params.mask_terminal and out.done) else q[s_next].max()
            q[s, a] += params.alpha * (out.reward + params.gamma * bootstrap - q[s, a])
            state, s, done = out.next_state, s_next, out.done
    return q
