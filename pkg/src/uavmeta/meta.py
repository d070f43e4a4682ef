"""First-order MAML over deep Q-learning tasks.

Tasks differ in the AoI/power trade-off weight and the device layout. For
each sampled task the shared initialization is copied into a fresh DQN agent
and trained for a few episodes (support), then scored by the TD loss on fresh
greedy episodes (query). The outer update applies the sum of query-loss
gradients, taken at the adapted weights, to the shared initialization.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import env as uav
from . import nn
from . import rl
from .errors import ConstraintError
from .metrics import MetricsRecord


class TaskRole(str, Enum):
    META_TRAIN = "meta-train"
    META_TEST = "meta-test"


@dataclass(frozen=True)
class Task:
    """One MDP of the family. ``layout_seed=None`` keeps the base config's device layout."""

    lambda_tradeoff: float
    layout_seed: int | None = None
    role: TaskRole = TaskRole.META_TRAIN
    env_overrides: tuple = ()

    def __post_init__(self):
        if self.lambda_tradeoff < 0:
            raise ValueError("lambda_tradeoff must be >= 0")
        object.__setattr__(self, "role", TaskRole(self.role))
        if isinstance(self.env_overrides, dict):
            object.__setattr__(self, "env_overrides", tuple(sorted(self.env_overrides.items())))

    def env_config(self, base: uav.EnvConfig) -> uav.EnvConfig:
        changes = dict(self.env_overrides)
        cfg = base.replace(**changes) if changes else base
        if self.layout_seed is not None:
            positions = uav.random_device_positions(cfg.side_length_m, cfg.n_devices, self.layout_seed)
            cfg = cfg.replace(device_positions=positions)
        return cfg.replace(lambda_tradeoff=float(self.lambda_tradeoff))

    def to_dict(self) -> dict:
        return {"lambda": self.lambda_tradeoff, "layout_seed": self.layout_seed, "role": self.role.value}

    @classmethod
    def from_dict(cls, data: dict) -> "Task":
        unknown = set(data) - {"lambda", "layout_seed", "role"}
        if unknown:
            raise ValueError(f"unknown task keys: {sorted(unknown)}")
        return cls(float(data["lambda"]), data.get("layout_seed"), TaskRole(data.get("role", "meta-train")))


def lambda_grids(n_train: int, n_test: int, lambda_range) -> tuple:
    """Interleaved trade-off values.

    Test values are evenly spaced over the closed range; training values sit at
    the centres of ``n_train`` equal bins. With ``n_test = n_train + 1`` every
    training value lies halfway between two test values.
    """
    lo, hi = (float(v) for v in lambda_range)
    if n_train < 1 or n_test < 1:
        raise ValueError("n_train and n_test must be >= 1")
    if lo < 0 or hi < lo:
        raise ValueError("lambda_range must satisfy 0 <= lo <= hi")
    if lo == hi and (n_train > 1 or n_test > 1):
        raise ValueError("a degenerate lambda range cannot hold several distinct tasks")
    width = (hi - lo) / n_train
    train = lo + width * (np.arange(n_train) + 0.5)
    test = np.linspace(lo, hi, n_test) if n_test > 1 else np.array([(lo + hi) / 2])
    if lo < hi and np.any(np.isclose(test[:, None], train[None, :], rtol=0, atol=1e-9 * (hi - lo))):
        raise ValueError(f"n_train={n_train} and n_test={n_test} put a test value on a training value")
    return [float(v) for v in train], [float(v) for v in test]


def make_task_family(n_train: int, n_test: int, lambda_range=(0.0, 500.0), seed=0) -> tuple:
    """Training and test tasks with interleaved trade-off weights and independent layouts."""
    train_l, test_l = lambda_grids(n_train, n_test, lambda_range)
    layout_seeds = np.random.default_rng(seed).integers(2**31, size=n_train + n_test)
    train = [Task(lam, int(s), TaskRole.META_TRAIN) for lam, s in zip(train_l, layout_seeds[:n_train])]
    test = [Task(lam, int(s), TaskRole.META_TEST) for lam, s in zip(test_l, layout_seeds[n_train:])]
    return train, test


@dataclass(frozen=True)
class MetaConfig:
    """Outer-loop settings plus the base environment and per-task DQN settings.

    ``alpha`` replaces the DQN learning rate inside every task; ``e_max`` caps the
    training episodes any single task may receive.
    """

    alpha: float = 1e-4
    beta: float = 1e-4
    epochs: int = 500
    task_batch_size: int = 6
    inner_episodes: int = 50
    eval_episodes: int = 1
    e_max: int = 100
    seed: int = 0
    meta_optimizer: str = "adam"
    # mini-batch size of the query loss; None uses the DQN batch size
    query_batch_size: int | None = None
    dqn: rl.DqnHyperparams = field(default_factory=rl.DqnHyperparams)
    base_env: uav.EnvConfig = field(default_factory=uav.EnvConfig)

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if self.epochs < 0 or self.task_batch_size < 1 or self.eval_episodes < 1:
            raise ValueError("epochs >= 0, task_batch_size >= 1 and eval_episodes >= 1 are required")
        if self.inner_episodes < 0:
            raise ValueError("inner_episodes must be >= 0")
        if self.inner_episodes > self.e_max:
            raise ConstraintError(f"inner_episodes={self.inner_episodes} exceeds the budget e_max={self.e_max}")
        if self.meta_optimizer not in ("adam", "sgd"):
            raise ValueError("meta_optimizer must be 'adam' or 'sgd'")

    @property
    def task_hp(self) -> rl.DqnHyperparams:
        return dataclasses.replace(self.dqn, lr=self.alpha) if self.alpha > 0 else self.dqn

    def architecture(self) -> nn.MlpArchitecture:
        return self.dqn.architecture(self.base_env)


@dataclass
class MetaState:
    theta: np.ndarray
    meta_adam: nn.AdamState
    epoch: int = 0
    meta_loss_history: list = field(default_factory=list)
    records: list = field(default_factory=list)


def init_meta_state(cfg: MetaConfig, seed) -> MetaState:
    arch = cfg.architecture()
    return MetaState(nn.init_params(arch, seed), nn.AdamState.zeros(arch.n_params))


def _check_budget(episodes: int, cfg: MetaConfig):
    if episodes > cfg.e_max:
        raise ConstraintError(f"{episodes} episodes exceed the few-shot budget e_max={cfg.e_max}")


def _adapted_agent(theta, task, cfg, seed, episodes=None) -> tuple:
    episodes = cfg.inner_episodes if episodes is None else int(episodes)
    _check_budget(episodes, cfg)
    env_cfg = task.env_config(cfg.base_env)
    agent = rl.make_agent(env_cfg, cfg.task_hp, seed, params=theta, e_max=cfg.e_max)
    _, records = rl.train_dqn(env_cfg, agent, episodes, seed=seed, run_id="support")
    return agent, records


def inner_adapt(theta: np.ndarray, task: Task, cfg: MetaConfig, seed, episodes=None) -> tuple:
    """Train a copy of ``theta`` on ``task`` with a fresh agent and buffer.

    Returns ``(theta_prime, support_records)``; ``theta`` itself is not touched.
    """
    agent, records = _adapted_agent(theta, task, cfg, seed, episodes)
    return agent.online.copy(), records


def query_batch(theta_prime: np.ndarray, task: Task, cfg: MetaConfig, seed, buffer=None) -> tuple:
    """Run the greedy query episodes and draw the query mini-batch.

    The query transitions are appended to ``buffer`` (the task's support buffer
    during meta-training, a new one otherwise). Returns ``(batch, summary)``
    with ``summary = (mean_reward, mean_aoi, mean_power_w)`` over the query
    episodes.
    """
    env_cfg = task.env_config(cfg.base_env)
    hp = cfg.task_hp
    arch = hp.architecture(env_cfg)
    buffer = rl.ReplayBuffer(hp.buffer_capacity) if buffer is None else buffer
    policy = rl.q_policy(env_cfg, arch, theta_prime)
    rewards, aois, powers = [], [], []
    for ep in range(cfg.eval_episodes):
        state = uav.reset(env_cfg, uav.seed_words(seed, _QUERY_STREAM, ep))
        done = False
        while not done:
            action = policy(state)
            out = uav.step(env_cfg, state, action)
            buffer.push(rl.Transition(uav.encode_state(env_cfg, state), action, out.reward,
                                      uav.encode_state(env_cfg, out.next_state), out.done))
            rewards.append(out.reward)
            aois.append(out.mean_aoi)
            powers.append(out.power_w)
            state, done = out.next_state, out.done
    rng = np.random.default_rng(uav.seed_words(seed, _QUERY_STREAM))
    batch = buffer.sample(cfg.query_batch_size or hp.batch_size, rng)
    return batch, (float(np.mean(rewards)), float(np.mean(aois)), float(np.mean(powers)))


def query_loss(theta_prime: np.ndarray, task: Task, cfg: MetaConfig, seed, buffer=None) -> tuple:
    """TD loss of the adapted weights and its gradient on the query mini-batch.

    The bootstrap target uses ``theta_prime`` itself and is held constant, so
    the gradient is the first-order one at the adapted weights. Returns
    ``(loss, grad, (mean_reward, mean_aoi, mean_power_w))`` where the means
    describe the query episodes (see :func:`query_batch`).
    """
    hp = cfg.task_hp
    arch = hp.architecture(task.env_config(cfg.base_env))
    batch, summary = query_batch(theta_prime, task, cfg, seed, buffer)
    loss, grad = rl.td_loss(arch, theta_prime, theta_prime, batch, hp.gamma, hp.mask_terminal, hp.reward_scale)
    return loss, grad, summary


# keeps query resets and sampling independent of the support episodes that share the task seed
_QUERY_STREAM = 7919


def _adapt_and_score(theta, task, cfg, seed):
    agent, _ = _adapted_agent(theta, task, cfg, seed)
    return query_loss(agent.online, task, cfg, seed, buffer=agent.buffer)


def task_seed(seed, task: Task) -> list:
    """Seed words for one task inside a meta step, fixed by the task's identity.

    Deriving them from the task rather than its batch position makes the step
    independent of batch order, and repeated tasks see identical randomness.
    """
    bits = int(np.float64(task.lambda_tradeoff).view(np.uint64))
    layout = 2**32 - 1 if task.layout_seed is None else task.layout_seed
    return uav.seed_words(seed, bits >> 32, bits & 0xFFFFFFFF, layout)


def meta_gradient(theta: np.ndarray, task_batch, cfg: MetaConfig, seed, executor=None) -> tuple:
    """Summed query losses and gradients over ``task_batch``.

    Returns ``(meta_loss, meta_grad, summaries)`` where ``summaries`` holds one
    ``(mean_reward, mean_aoi, mean_power_w)`` row per task. Results are summed in
    batch order, so any ``executor`` (anything with ``map``) gives the serial answer.
    """
    task_batch = list(task_batch)
    if not task_batch:
        raise ValueError("task batch is empty")
    mapper = map if executor is None else executor.map
    seeds = [task_seed(seed, t) for t in task_batch]
    results = list(mapper(_adapt_and_score, [theta] * len(task_batch), task_batch,
                          [cfg] * len(task_batch), seeds))
    meta_loss = 0.0
    meta_grad = np.zeros_like(theta)
    for loss, grad, _ in results:
        meta_loss += loss
        meta_grad += grad
    return meta_loss, meta_grad, np.array([r[2] for r in results])


def meta_step(state: MetaState, task_batch, cfg: MetaConfig, seed, executor=None) -> MetaState:
    """One outer update over ``task_batch`` (see :func:`meta_gradient`)."""
    t0 = time.perf_counter()
    theta = state.theta
    meta_loss, meta_grad, summaries = meta_gradient(theta, task_batch, cfg, seed, executor)
    if cfg.meta_optimizer == "adam":
        new_theta, new_adam = nn.adam_step(theta, meta_grad, state.meta_adam, cfg.beta)
    else:
        new_theta, new_adam = nn.sgd_step(theta, meta_grad, cfg.beta), state.meta_adam
    record = MetricsRecord("meta", "meta-train", state.epoch, float(summaries[:, 0].mean()),
                           float(summaries[:, 1].mean()), float(summaries[:, 2].mean()),
                           meta_loss, None, time.perf_counter() - t0)
    return MetaState(new_theta, new_adam, state.epoch + 1,
                     state.meta_loss_history + [meta_loss], state.records + [record])


def meta_train(cfg: MetaConfig, tasks, seed=None, executor=None, on_epoch_end=None) -> tuple:
    """Outer loop: each epoch samples ``task_batch_size`` distinct tasks and takes one meta step.

    Returns ``(final_state, history)`` with one record per epoch.
    """
    tasks = list(tasks)
    seed = cfg.seed if seed is None else seed
    if cfg.task_batch_size > len(tasks):
        raise ValueError(f"task_batch_size={cfg.task_batch_size} exceeds the {len(tasks)} training tasks")
    init_seed, sample_seed = np.random.SeedSequence(seed).spawn(2)
    state = init_meta_state(cfg, init_seed)
    rng = np.random.default_rng(sample_seed)
    for epoch in range(cfg.epochs):
        picks = rng.choice(len(tasks), size=cfg.task_batch_size, replace=False)
        state = meta_step(state, [tasks[i] for i in picks], cfg, [seed, epoch], executor=executor)
        if on_epoch_end is not None:
            on_epoch_end(state)
    return state, list(state.records)


def meta_test(theta: np.ndarray, task: Task, shots: int, cfg: MetaConfig, seed=0, eval_seed=None) -> list:
    """Fine-tune a copy of ``theta`` for ``shots`` episodes on ``task``.

    Returns ``shots + 1`` greedy :class:`~uavmeta.rl.Evaluation` results, the
    first taken before any fine-tuning.
    """
    _check_budget(shots, cfg)
    env_cfg = task.env_config(cfg.base_env)
    hp = cfg.task_hp
    eval_seed = seed if eval_seed is None else eval_seed
    agent = rl.make_agent(env_cfg, hp, seed, params=theta, e_max=cfg.e_max)
    curve = [rl.evaluate_policy(env_cfg, agent.arch, agent.online, cfg.eval_episodes, eval_seed, hp.gamma)]
    for _ in range(shots):
        rl.train_dqn(env_cfg, agent, 1, seed=seed, run_id="meta-test", schedule_length=shots)
        curve.append(rl.evaluate_policy(env_cfg, agent.arch, agent.online, cfg.eval_episodes, eval_seed, hp.gamma))
    return curve
