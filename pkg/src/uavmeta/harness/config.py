"""Experiment configuration: JSON schema, defaults, presets and validation.

A config file is a JSON object with these top-level keys, all optional:

``mode``        one of ``train-dqn``, ``meta-train``, ``meta-test``, ``eval``, ``sweep``
``seed``        integer master seed
``output_dir``  directory for CSVs, checkpoints and the manifest
``env``         :class:`~uavmeta.env.EnvConfig` fields
``dqn``         :class:`~uavmeta.rl.DqnHyperparams` fields
``meta``        outer-loop fields of :class:`~uavmeta.meta.MetaConfig`
``tasks``       task-family generator ``{n_train, n_test, lambda_range, seed}``
                or the path of a task-family JSON file
``run``         per-mode settings, see :class:`RunSection`

Unset fields take the defaults of the dataclasses, which carry the reference
hyperparameters. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .. import env as uav
from .. import meta, rl
from ..errors import ConfigError


def _config_error(path, where, message) -> ConfigError:
    return ConfigError(message, path, where)


class Mode(str, Enum):
    TRAIN_DQN = "train-dqn"
    META_TRAIN = "meta-train"
    META_TEST = "meta-test"
    EVAL = "eval"
    SWEEP = "sweep"


# MetaConfig fields owned by other sections
_META_EXCLUDED = ("dqn", "base_env", "seed")


@dataclass(frozen=True)
class TaskFamilySpec:
    n_train: int = 4
    n_test: int = 11
    lambda_range: tuple = (0.0, 500.0)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "lambda_range", tuple(float(v) for v in self.lambda_range))
        if len(self.lambda_range) != 2:
            raise ValueError("lambda_range must be [low, high]")
        # fails early on empty or colliding grids
        meta.lambda_grids(self.n_train, self.n_test, self.lambda_range)


@dataclass(frozen=True)
class RunSection:
    """Per-mode settings.

    ``episodes``: DQN training episodes for ``train-dqn`` and per task for ``sweep``.
    ``shots``: fine-tuning episodes per test task for ``meta-test``.
    ``eval_episodes``: greedy episodes behind every evaluation point.
    ``checkpoint``: parameter file used as the initial / evaluated weights; empty
    means a seeded random initialization.
    ``compare_random``: ``meta-test`` also fine-tunes a random initialization.
    ``task_indices``: subset of test tasks for ``meta-test`` (empty = all).
    ``sweep_fixed_layout``: ``sweep`` keeps the ``env`` device layout for every lambda.
    ``baselines``: ``eval`` also scores the heuristic schedulers.
    ``workers``: processes for the per-task work of a meta step (1 = serial).
    """

    episodes: int = 500
    shots: int = 30
    eval_episodes: int = 10
    checkpoint: str = ""
    compare_random: bool = True
    task_indices: tuple = ()
    sweep_fixed_layout: bool = True
    baselines: bool = True
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "task_indices", tuple(int(i) for i in self.task_indices))
        if self.episodes < 0 or self.shots < 0:
            raise ValueError("episodes and shots must be >= 0")
        if self.eval_episodes < 1:
            raise ValueError("eval_episodes must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    mode: Mode = Mode.META_TRAIN
    seed: int = 0
    output_dir: str = "runs/default"
    env: uav.EnvConfig = field(default_factory=uav.EnvConfig)
    dqn: rl.DqnHyperparams = field(default_factory=rl.DqnHyperparams)
    meta: meta.MetaConfig = field(default_factory=meta.MetaConfig)
    tasks: TaskFamilySpec | str = field(default_factory=TaskFamilySpec)
    run: RunSection = field(default_factory=RunSection)

    def meta_config(self) -> meta.MetaConfig:
        """The outer-loop config wired to this experiment's env, DQN settings and seed."""
        return dataclasses.replace(self.meta, dqn=self.dqn, base_env=self.env, seed=self.seed)

    def task_family(self, base_dir=None) -> tuple:
        """``(train, test)`` task lists from the generator spec or a family file."""
        if isinstance(self.tasks, TaskFamilySpec):
            t = self.tasks
            return meta.make_task_family(t.n_train, t.n_test, t.lambda_range, t.seed)
        path = Path(self.tasks)
        if not path.is_absolute() and base_dir is not None:
            path = Path(base_dir) / path
        tasks = load_task_family(path)
        return ([t for t in tasks if t.role is meta.TaskRole.META_TRAIN],
                [t for t in tasks if t.role is meta.TaskRole.META_TEST])


def load_task_family(path) -> list:
    try:
        items = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise _config_error(str(path), "tasks", f"cannot read task family: {exc}") from None
    if not isinstance(items, list):
        raise _config_error(str(path), "tasks", "a task family file holds a JSON list")
    out = []
    for i, item in enumerate(items):
        try:
            out.append(meta.Task.from_dict(item))
        except (KeyError, TypeError, ValueError) as exc:
            raise _config_error(str(path), f"[{i}]", str(exc)) from None
    return out


def save_task_family(path, tasks) -> Path:
    path = Path(path)
    path.write_text(json.dumps([t.to_dict() for t in tasks], indent=2) + "\n")
    return path


# ---------------------------------------------------------------------------
# presets

# Scaled-down instance that runs in about a minute per meta-training seed on one CPU.
DESK_SCALE = {
    "env": {"cells_per_side": 5, "horizon": 20},
    "dqn": {"hidden_sizes": [64, 64], "batch_size": 32, "reward_scale": 0.01, "lr": 1e-3},
    "meta": {"beta": 1e-3, "epochs": 500, "task_batch_size": 4, "inner_episodes": 1,
             "eval_episodes": 1, "query_batch_size": 40},
    "tasks": {"n_train": 8, "n_test": 11, "lambda_range": [0.0, 1e5]},
    "run": {"episodes": 300, "shots": 30, "eval_episodes": 10},
}

# Full-size instance: 10x10 grid, five randomly placed devices, 500 epochs.
PAPER_SCALE = {
    "env": {"cells_per_side": 10, "horizon": 100,
            "device_positions": [list(p) for p in uav.random_device_positions(1000.0, 5, 0)]},
    "dqn": {"hidden_sizes": [256, 256], "batch_size": 64},
    "meta": {"epochs": 500, "task_batch_size": 6, "inner_episodes": 50, "e_max": 500},
    "tasks": {"n_train": 10, "n_test": 11, "lambda_range": [0.0, 500.0]},
    "run": {"episodes": 500, "shots": 500},
}

PRESETS = {"desk": DESK_SCALE, "paper": PAPER_SCALE}


def deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = value
    return out


# ---------------------------------------------------------------------------
# parsing

def _section(cls, raw, path: str, name: str, exclude=()):
    if not isinstance(raw, dict):
        raise _config_error(path, name, "expected a JSON object")
    allowed = {f.name: f for f in dataclasses.fields(cls) if f.name not in exclude}
    for key in raw:
        if key not in allowed:
            raise _config_error(path, f"{name}.{key}", "unknown key")
    kwargs = {}
    for key, value in raw.items():
        if isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        message = str(exc)
        culprit = next((k for k in raw if k in message), None)
        where = f"{name}.{culprit}" if culprit else name
        raise _config_error(path, where, message) from None


def config_from_dict(raw: dict, path: str = "<dict>") -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise _config_error(path, "<root>", "config must be a JSON object")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key in raw:
        if key not in known:
            raise _config_error(path, key, "unknown key")
    kwargs = {}
    if "mode" in raw:
        try:
            kwargs["mode"] = Mode(raw["mode"])
        except ValueError:
            choices = ", ".join(m.value for m in Mode)
            raise _config_error(path, "mode", f"must be one of {choices}") from None
    if "seed" in raw:
        if isinstance(raw["seed"], bool) or not isinstance(raw["seed"], int) or raw["seed"] < 0:
            raise _config_error(path, "seed", "must be a non-negative integer")
        kwargs["seed"] = raw["seed"]
    if "output_dir" in raw:
        if not isinstance(raw["output_dir"], str) or not raw["output_dir"]:
            raise _config_error(path, "output_dir", "must be a non-empty string")
        kwargs["output_dir"] = raw["output_dir"]
    if "env" in raw:
        kwargs["env"] = _section(uav.EnvConfig, raw["env"], path, "env")
    if "dqn" in raw:
        kwargs["dqn"] = _section(rl.DqnHyperparams, raw["dqn"], path, "dqn")
    if "meta" in raw:
        kwargs["meta"] = _section(meta.MetaConfig, raw["meta"], path, "meta", exclude=_META_EXCLUDED)
    if "tasks" in raw:
        if isinstance(raw["tasks"], str):
            kwargs["tasks"] = raw["tasks"]
        else:
            kwargs["tasks"] = _section(TaskFamilySpec, raw["tasks"], path, "tasks")
    if "run" in raw:
        kwargs["run"] = _section(RunSection, raw["run"], path, "run")
    return ExperimentConfig(**kwargs)


def _jsonable(value):
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    return value


def _section_dict(obj, exclude=()) -> dict:
    return {f.name: _jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj) if f.name not in exclude}


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Every effective value, in a form :func:`config_from_dict` reads back unchanged."""
    return {
        "mode": cfg.mode.value,
        "seed": cfg.seed,
        "output_dir": cfg.output_dir,
        "env": _section_dict(cfg.env),
        "dqn": _section_dict(cfg.dqn),
        "meta": _section_dict(cfg.meta, exclude=_META_EXCLUDED),
        "tasks": cfg.tasks if isinstance(cfg.tasks, str) else _section_dict(cfg.tasks),
        "run": _section_dict(cfg.run),
    }


def load_config(path, preset: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Read a JSON config (or a run manifest) and fill unset fields with defaults.

    ``preset`` (``"desk"`` or ``"paper"``) supplies values beneath the file's own;
    ``overrides`` are applied on top of both.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise _config_error(str(path), "<file>", "no such file") from None
    except json.JSONDecodeError as exc:
        raise _config_error(str(path), f"line {exc.lineno}", f"invalid JSON: {exc.msg}") from None
    if isinstance(raw, dict) and "config" in raw and "code_version" in raw:
        raw = raw["config"]
    return build_config(raw, preset, overrides, str(path))


def build_config(raw: dict | None = None, preset: str | None = None, overrides: dict | None = None,
                 path: str = "<dict>") -> ExperimentConfig:
    merged = {}
    if preset is not None:
        if preset not in PRESETS:
            raise _config_error(path, "preset", f"unknown preset {preset!r}")
        merged = deep_merge(merged, PRESETS[preset])
    if raw:
        if not isinstance(raw, dict):
            raise _config_error(path, "<root>", "config must be a JSON object")
        merged = deep_merge(merged, raw)
    if overrides:
        merged = deep_merge(merged, overrides)
    return config_from_dict(merged, path)


def save_config(path, cfg: ExperimentConfig) -> Path:
    path = Path(path)
    path.write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n")
    return path
