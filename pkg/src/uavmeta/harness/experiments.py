"""Run one configured experiment and write its artifacts.

Every run writes ``manifest.json`` (the full effective config, the seed, the
code version and a timestamp) next to its outputs. Feeding that manifest back
through :func:`~uavmeta.harness.config.load_config` reproduces every CSV byte
for byte, apart from the wall-time column.

Artifacts per mode:

``train-dqn``   train.csv, eval.csv, dqn.bin (+ dqn.json)
``meta-train``  meta_loss.csv, meta_theta.bin (+ meta_theta.json), tasks.json
``meta-test``   adaptation.csv, tasks.json
``eval``        eval.csv
``sweep``       sweep.csv, tasks.json
"""

from __future__ import annotations

import dataclasses
import datetime
import json
import logging
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from .. import meta, nn, rl
from ..errors import ConfigError
from ..metrics import write_metrics_csv
from .baselines import BaselineKind, baseline_policy
from .config import ExperimentConfig, Mode, config_to_dict, save_task_family

log = logging.getLogger(__name__)

# seed streams kept apart from the per-task streams [seed, j]
_RANDOM_INIT_STREAM = 104729
_EVAL_STREAM = 130363


@dataclass
class RunResult:
    status: int
    output_dir: Path
    artifacts: dict = field(default_factory=dict)


def code_version() -> str:
    """``git describe`` of the source tree, or the package version outside a checkout."""
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return f"uavmeta-{__version__}"
    text = out.stdout.strip()
    return text if out.returncode == 0 and text else f"uavmeta-{__version__}"


def write_manifest(out_dir: Path, cfg: ExperimentConfig) -> Path:
    manifest = {
        "config": config_to_dict(cfg),
        "seed": cfg.seed,
        "code_version": code_version(),
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def save_checkpoint(path: Path, arch: nn.MlpArchitecture, params: np.ndarray, hyperparams: dict) -> Path:
    """Parameter file plus a JSON sidecar with the settings that produced it."""
    nn.save_params(path, arch, params)
    sidecar = {"layer_sizes": list(arch.layer_sizes), "n_params": arch.n_params, **hyperparams}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return path


def _initial_params(cfg: ExperimentConfig, arch: nn.MlpArchitecture):
    """Weights from ``run.checkpoint``, or ``None`` when no checkpoint is configured."""
    if not cfg.run.checkpoint:
        return None
    path = Path(cfg.run.checkpoint)
    if not path.exists():
        raise ConfigError("no such checkpoint file", str(path), "run.checkpoint")
    loaded_arch, params = nn.load_params(path)
    if loaded_arch != arch:
        raise ConfigError(f"checkpoint layers {loaded_arch.layer_sizes} do not match the configured "
                          f"{arch.layer_sizes}", str(path), "run.checkpoint")
    return params


def _random_params(cfg: ExperimentConfig, arch: nn.MlpArchitecture) -> np.ndarray:
    return nn.init_params(arch, [cfg.seed, _RANDOM_INIT_STREAM])


def _train_dqn(cfg: ExperimentConfig, out: Path) -> dict:
    env_cfg = cfg.env
    agent = rl.make_agent(env_cfg, cfg.dqn, [cfg.seed, 0], params=_initial_params(cfg, cfg.dqn.architecture(env_cfg)))
    _, records = rl.train_dqn(env_cfg, agent, cfg.run.episodes, seed=[cfg.seed, 1], run_id="dqn")
    t0 = time.perf_counter()
    ev = rl.evaluate_policy(env_cfg, agent.arch, agent.online, cfg.run.eval_episodes,
                            [cfg.seed, _EVAL_STREAM], cfg.dqn.gamma)
    eval_rec = ev.to_record("dqn", "eval", 0, time.perf_counter() - t0)
    ckpt = save_checkpoint(out / "dqn.bin", agent.arch, agent.online,
                           {"dqn": config_to_dict(cfg)["dqn"], "episodes": cfg.run.episodes,
                            "lambda_tradeoff": env_cfg.lambda_tradeoff})
    return {"train": write_metrics_csv(out / "train.csv", records),
            "eval": write_metrics_csv(out / "eval.csv", [eval_rec]),
            "checkpoint": ckpt}


def _meta_train(cfg: ExperimentConfig, out: Path) -> dict:
    mcfg = cfg.meta_config()
    train, test = cfg.task_family()
    family = save_task_family(out / "tasks.json", train + test)
    workers = cfg.run.workers
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else nullcontext()

    def progress(state):
        if state.epoch % 10 == 0 or state.epoch == mcfg.epochs:
            log.info("epoch %d/%d meta-loss %.4g", state.epoch, mcfg.epochs, state.meta_loss_history[-1])

    with pool as executor:
        state, history = meta.meta_train(mcfg, train, seed=cfg.seed, executor=executor, on_epoch_end=progress)
    ckpt = save_checkpoint(out / "meta_theta.bin", mcfg.architecture(), state.theta,
                           {"meta": config_to_dict(cfg)["meta"], "dqn": config_to_dict(cfg)["dqn"],
                            "epochs_done": state.epoch})
    return {"meta_loss": write_metrics_csv(out / "meta_loss.csv", history),
            "checkpoint": ckpt, "tasks": family}


def _adaptation_records(curve, run_id: str, wall_time_s: float) -> list:
    per_point = wall_time_s / len(curve)
    return [ev.to_record(run_id, "meta-test", i, per_point) for i, ev in enumerate(curve)]


def _meta_test(cfg: ExperimentConfig, out: Path) -> dict:
    mcfg = dataclasses.replace(cfg.meta_config(), eval_episodes=cfg.run.eval_episodes)
    arch = mcfg.architecture()
    _, test = cfg.task_family()
    indices = cfg.run.task_indices or tuple(range(len(test)))
    for j in indices:
        if not 0 <= j < len(test):
            raise ConfigError(f"task index {j} outside the {len(test)} test tasks", None, "run.task_indices")
    family = save_task_family(out / "tasks.json", [test[j] for j in indices])
    starts = []
    loaded = _initial_params(cfg, arch)
    if loaded is not None:
        starts.append(("checkpoint", loaded))
    if loaded is None or cfg.run.compare_random:
        starts.append(("random", _random_params(cfg, arch)))
    records = []
    for j in indices:
        for label, theta in starts:
            t0 = time.perf_counter()
            curve = meta.meta_test(theta, test[j], cfg.run.shots, mcfg, seed=[cfg.seed, j])
            records += _adaptation_records(curve, f"{label}/task{j:02d}", time.perf_counter() - t0)
            log.info("task %d (lambda=%g) %s: %.4g -> %.4g", j, test[j].lambda_tradeoff, label,
                     curve[0].mean_reward, curve[-1].mean_reward)
    return {"adaptation": write_metrics_csv(out / "adaptation.csv", records), "tasks": family}


def _eval(cfg: ExperimentConfig, out: Path) -> dict:
    env_cfg = cfg.env
    arch = cfg.dqn.architecture(env_cfg)
    seed = [cfg.seed, _EVAL_STREAM]
    params = _initial_params(cfg, arch)
    label = "checkpoint" if params is not None else "random-init"
    params = _random_params(cfg, arch) if params is None else params
    runs = [(label, rl.q_policy(env_cfg, arch, params))]
    if cfg.run.baselines:
        runs += [(kind.value, baseline_policy(kind, env_cfg, [cfg.seed, i]))
                 for i, kind in enumerate(BaselineKind)]
    records = []
    for label, policy in runs:
        t0 = time.perf_counter()
        ev = rl.rollout(env_cfg, policy, cfg.run.eval_episodes, seed, cfg.dqn.gamma)
        records.append(ev.to_record(label, "eval", 0, time.perf_counter() - t0))
    return {"eval": write_metrics_csv(out / "eval.csv", records)}


def sweep_run_id(lambda_tradeoff: float) -> str:
    return f"lambda={lambda_tradeoff!r}"


def parse_sweep_run_id(run_id: str) -> float:
    if not run_id.startswith("lambda="):
        raise ValueError(f"not a sweep run id: {run_id!r}")
    return float(run_id[len("lambda="):])


def _sweep(cfg: ExperimentConfig, out: Path) -> dict:
    _, test = cfg.task_family()
    if cfg.run.sweep_fixed_layout:
        test = [dataclasses.replace(t, layout_seed=None) for t in test]
    family = save_task_family(out / "tasks.json", test)
    records = []
    for j, task in enumerate(test):
        t0 = time.perf_counter()
        env_cfg = task.env_config(cfg.env)
        agent = rl.make_agent(env_cfg, cfg.dqn, [cfg.seed, j, 0])
        rl.train_dqn(env_cfg, agent, cfg.run.episodes, seed=[cfg.seed, j, 1], run_id="sweep")
        ev = rl.evaluate_policy(env_cfg, agent.arch, agent.online, cfg.run.eval_episodes,
                                [cfg.seed, _EVAL_STREAM], cfg.dqn.gamma)
        records.append(ev.to_record(sweep_run_id(task.lambda_tradeoff), "sweep", j, time.perf_counter() - t0))
        log.info("lambda=%g: mean AoI %.3f, mean power %.4g W", task.lambda_tradeoff, ev.mean_aoi, ev.mean_power_w)
    return {"sweep": write_metrics_csv(out / "sweep.csv", records), "tasks": family}


_DISPATCH = {
    Mode.TRAIN_DQN: _train_dqn,
    Mode.META_TRAIN: _meta_train,
    Mode.META_TEST: _meta_test,
    Mode.EVAL: _eval,
    Mode.SWEEP: _sweep,
}


def run_experiment(cfg: ExperimentConfig) -> RunResult:
    """Dispatch on ``cfg.mode``; returns status 0 and the artifact paths on success."""
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory: {exc}", str(out), "output_dir") from None
    manifest = write_manifest(out, cfg)
    artifacts = _DISPATCH[cfg.mode](cfg, out)
    artifacts["manifest"] = manifest
    return RunResult(0, out, artifacts)


def read_sweep_points(records) -> list:
    """``(lambda, mean_aoi, mean_power_w)`` per sweep row, in file order."""
    return [(parse_sweep_run_id(r.run_id), r.mean_aoi, r.mean_power_w) for r in records if r.phase == "sweep"]


__all__ = ["RunResult", "run_experiment", "code_version", "write_manifest", "save_checkpoint",
           "sweep_run_id", "parse_sweep_run_id", "read_sweep_points"]
