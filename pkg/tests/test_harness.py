import json
import re
import warnings

import numpy as np
import pytest
from scipy import stats

from uavmeta import env as uav
from uavmeta import rl
from uavmeta.errors import ConfigError, SchemaError
from uavmeta.harness import cli
from uavmeta.harness.baselines import BaselineKind, baseline_policy, device_cell, step_toward
from uavmeta.harness.config import (DESK_SCALE, Mode, build_config, config_from_dict, config_to_dict, load_config,
                                    load_task_family, save_config)
from uavmeta.harness.experiments import parse_sweep_run_id, read_sweep_points, run_experiment, sweep_run_id
from uavmeta.harness.plots import emit_plots, render_csv
from uavmeta.metrics import MetricsRecord, deterministic_view, read_metrics_csv, write_metrics_csv

TINY_RAW = {
    "env": {"side_length_m": 300.0, "cells_per_side": 3, "horizon": 10, "a_max": 5,
            "device_positions": [[40.0, 60.0], [260.0, 210.0]]},
    "dqn": {"hidden_sizes": [16], "batch_size": 8, "reward_scale": 0.01, "lr": 1e-3},
    "meta": {"epochs": 3, "task_batch_size": 2, "inner_episodes": 1, "query_batch_size": 8, "e_max": 20},
    "tasks": {"n_train": 2, "n_test": 3, "lambda_range": [0.0, 100.0]},
    "run": {"episodes": 4, "shots": 2, "eval_episodes": 1},
}


def tiny(mode, out, **overrides):
    return build_config(TINY_RAW, overrides={"mode": mode, "output_dir": str(out), **overrides})


# ---------------------------------------------------------------- config

def test_empty_config_gives_table_defaults():
    cfg = config_from_dict({})
    env = cfg.env
    assert env.g0_db == -30.0
    assert env.bandwidth_hz == 1e6
    assert env.uav_altitude_m == 100.0
    assert env.packet_bits == 5e6
    assert env.noise_power_w == 1e-13
    assert env.a_max == 30
    assert env.side_length_m == 1000.0 and env.cells_per_side == 10
    assert cfg.meta.alpha == 1e-4 and cfg.meta.beta == 1e-4
    assert cfg.dqn.gamma == 0.99
    assert cfg.dqn.hidden_sizes == (256, 256) and cfg.dqn.buffer_capacity == 100_000
    assert cfg.mode is Mode.META_TRAIN


def test_invalid_values_name_the_field(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"env": {"a_max": 0}}))
    with pytest.raises(ConfigError) as err:
        load_config(path)
    assert "env.a_max" in str(err.value) and str(path) in str(err.value)
    path.write_text(json.dumps({"dqn": {"learning_rate": 1.0}}))
    with pytest.raises(ConfigError, match="dqn.learning_rate"):
        load_config(path)
    path.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(path)
    with pytest.raises(ConfigError, match="no such file"):
        load_config(tmp_path / "missing.json")
    with pytest.raises(ConfigError):
        config_from_dict({"mode": "dance"})


def test_round_trip_normalizes(tmp_path):
    raw = {"env": {"cells_per_side": 4}, "dqn": {"hidden_sizes": [8, 8]}, "seed": 3,
           "run": {"task_indices": [0, 2]}}
    cfg = config_from_dict(raw)
    saved = save_config(tmp_path / "a.json", cfg)
    again = load_config(saved)
    assert again == cfg
    assert config_to_dict(again) == json.loads(saved.read_text())


def test_presets_layer_under_file_values():
    cfg = build_config({"env": {"horizon": 7}}, preset="desk")
    assert cfg.env.horizon == 7
    assert cfg.env.cells_per_side == DESK_SCALE["env"]["cells_per_side"]
    paper = build_config(None, preset="paper")
    assert paper.env.cells_per_side == 10 and paper.env.n_devices == 5
    with pytest.raises(ConfigError):
        build_config(None, preset="huge")


def test_task_family_from_file(tmp_path):
    path = tmp_path / "tasks.json"
    tasks = [{"lambda": 0.0, "layout_seed": 1, "role": "meta-train"},
             {"lambda": 5.0, "layout_seed": None, "role": "meta-test"}]
    path.write_text(json.dumps(tasks))
    loaded = load_task_family(path)
    assert [t.lambda_tradeoff for t in loaded] == [0.0, 5.0]
    cfg = build_config({"tasks": str(path)})
    train, test = cfg.task_family()
    assert len(train) == 1 and len(test) == 1


# ---------------------------------------------------------------- baselines

def test_round_robin_cycles_devices():
    cfg = uav.EnvConfig(cells_per_side=5, horizon=9,
                        device_positions=((100.0, 100.0), (500.0, 500.0), (900.0, 900.0)))
    policy = baseline_policy(BaselineKind.ROUND_ROBIN, cfg)
    state = uav.reset(cfg, 0)
    served = []
    for _ in range(7):
        action = uav.Action.decode(policy(state), cfg.n_devices)
        served.append(action.device)
        state = uav.step(cfg, state, action.encode()).next_state
    assert served == [0, 1, 2, 0, 1, 2, 0]


def test_max_age_first_picks_argmax():
    cfg = uav.EnvConfig(cells_per_side=5, a_max=30,
                        device_positions=((100.0, 100.0), (500.0, 500.0), (900.0, 900.0)))
    state = uav.reset(cfg, 0)
    state = uav.EnvState(state.uav_cell, np.array([2, 9, 4]), state.step_count)
    action = uav.Action.decode(baseline_policy("max-age-first", cfg)(state), cfg.n_devices)
    assert action.device == 1


def test_greedy_manhattan_step():
    assert step_toward((0, 0), (3, 1)) is uav.Move.EAST
    assert step_toward((2, 4), (2, 0)) is uav.Move.SOUTH
    assert step_toward((1, 1), (1, 1)) is uav.Move.HOVER
    cfg = uav.EnvConfig(cells_per_side=5, device_positions=((1000.0, 0.0),))
    assert device_cell(cfg, 0) == (4, 0)


def test_random_baseline_is_seeded():
    cfg = uav.EnvConfig(cells_per_side=5)
    a = rl.rollout(cfg, baseline_policy("random", cfg, 3), 2, 0)
    b = rl.rollout(cfg, baseline_policy("random", cfg, 3), 2, 0)
    assert a == b


@pytest.mark.parametrize("layout_seed", [None, 11, 12])
def test_max_age_first_beats_random_on_aoi(layout_seed):
    cfg = uav.EnvConfig(cells_per_side=5, horizon=20, lambda_tradeoff=500.0,
                        device_positions=((250.0, 250.0), (750.0, 750.0), (100.0, 900.0)))
    if layout_seed is not None:
        cfg = cfg.replace(device_positions=uav.random_device_positions(1000.0, 4, layout_seed))
    diffs = []
    for s in range(20):
        mx = rl.rollout(cfg, baseline_policy("max-age-first", cfg), 1, [s]).mean_aoi
        rnd = rl.rollout(cfg, baseline_policy("random", cfg, [s, 1]), 1, [s]).mean_aoi
        diffs.append(mx - rnd)
    diffs = np.array(diffs)
    # one-sided paired t bound: the mean difference is <= 0 at 95% confidence
    upper = diffs.mean() + stats.t.ppf(0.95, len(diffs) - 1) * diffs.std(ddof=1) / np.sqrt(len(diffs))
    assert upper <= 0.0


def test_lambda_zero_dqn_matches_round_robin_aoi():
    # with no power weight, alternating service is optimal and round-robin achieves it
    cfg = uav.EnvConfig(side_length_m=300.0, cells_per_side=3, horizon=20, a_max=5,
                        device_positions=((40.0, 60.0), (260.0, 210.0)))
    hp = rl.DqnHyperparams(hidden_sizes=(32,), batch_size=32, lr=1e-3, gamma=0.5)
    for s in range(5):
        agent = rl.make_agent(cfg, hp, [s, 0])
        rl.train_dqn(cfg, agent, 500, seed=[s, 1])
        learned = rl.evaluate_policy(cfg, agent.arch, agent.online, 10, [s, 2]).mean_aoi
        rr = rl.rollout(cfg, baseline_policy("round-robin", cfg), 10, [s, 2]).mean_aoi
        assert learned <= rr


# ---------------------------------------------------------------- experiments

def csv_views(out):
    return {p.name: deterministic_view(p.read_text()) for p in sorted(out.glob("*.csv"))}


def run_and_replay(cfg, tmp_path, name):
    first = run_experiment(cfg)
    replay = load_config(first.output_dir / "manifest.json", overrides={"output_dir": str(tmp_path / f"{name}-b")})
    second = run_experiment(replay)
    return first, second


@pytest.mark.parametrize("mode", ["train-dqn", "meta-train", "meta-test", "eval", "sweep"])
def test_manifest_replay_reproduces_csvs(mode, tmp_path):
    cfg = tiny(mode, tmp_path / f"{mode}-a")
    first, second = run_and_replay(cfg, tmp_path, mode)
    assert first.status == 0
    a, b = csv_views(first.output_dir), csv_views(second.output_dir)
    assert a and a == b
    manifest = json.loads((first.output_dir / "manifest.json").read_text())
    assert set(manifest) == {"config", "seed", "code_version", "timestamp"}
    assert manifest["config"] == config_to_dict(cfg)


def test_meta_train_writes_one_row_per_epoch(tmp_path):
    result = run_experiment(tiny("meta-train", tmp_path, meta={"epochs": 4}))
    rows = read_metrics_csv(result.artifacts["meta_loss"])
    assert [r.index for r in rows] == [0, 1, 2, 3]
    assert result.artifacts["checkpoint"].exists()
    sidecar = json.loads(result.artifacts["checkpoint"].with_suffix(".json").read_text())
    assert sidecar["epochs_done"] == 4


def test_meta_test_from_checkpoint(tmp_path):
    trained = run_experiment(tiny("meta-train", tmp_path / "train"))
    ckpt = str(trained.artifacts["checkpoint"])
    result = run_experiment(tiny("meta-test", tmp_path / "test", run={"checkpoint": ckpt, "task_indices": [1]}))
    rows = read_metrics_csv(result.artifacts["adaptation"])
    assert {r.run_id for r in rows} == {"checkpoint/task01", "random/task01"}
    assert len(rows) == 2 * (TINY_RAW["run"]["shots"] + 1)


def test_checkpoint_architecture_mismatch(tmp_path):
    trained = run_experiment(tiny("meta-train", tmp_path / "train"))
    cfg = tiny("eval", tmp_path / "eval", dqn={"hidden_sizes": [8]},
               run={"checkpoint": str(trained.artifacts["checkpoint"])})
    with pytest.raises(ConfigError, match="run.checkpoint"):
        run_experiment(cfg)


def test_eval_includes_baselines(tmp_path):
    result = run_experiment(tiny("eval", tmp_path))
    ids = [r.run_id for r in read_metrics_csv(result.artifacts["eval"])]
    assert ids == ["random-init", "round-robin", "max-age-first", "random"]


def test_sweep_has_one_row_per_test_lambda(tmp_path):
    cfg = tiny("sweep", tmp_path, tasks={"n_train": 10, "n_test": 11, "lambda_range": [0.0, 500.0]},
               run={"episodes": 2})
    result = run_experiment(cfg)
    points = read_sweep_points(read_metrics_csv(result.artifacts["sweep"]))
    assert len(points) == 11
    assert [p[0] for p in points] == pytest.approx([50.0 * i for i in range(11)])


def test_sweep_run_id_round_trip():
    for lam in (0.0, 1e5, 33.333333333333336):
        assert parse_sweep_run_id(sweep_run_id(lam)) == lam
    with pytest.raises(ValueError):
        parse_sweep_run_id("dqn")


# ---------------------------------------------------------------- plots

def test_empty_csv_gives_warning_axes(tmp_path):
    path = write_metrics_csv(tmp_path / "empty.csv", [])
    with pytest.warns(UserWarning, match="no data rows"):
        svg = render_csv(path)
    assert 'class="warning"' in svg and 'class="axis"' in svg
    assert "<polyline" not in svg


def test_two_rows_give_two_point_polyline(tmp_path):
    rows = [MetricsRecord("dqn", "train", i, -float(i), 1.0, 0.1) for i in range(2)]
    svg = render_csv(write_metrics_csv(tmp_path / "two.csv", rows), window=3)
    lines = re.findall(r'<polyline[^>]*points="([^"]*)"', svg)
    assert len(lines) == 1 and len(lines[0].split()) == 2
    assert "moving-average window=3" in svg


def test_meta_loss_csv_plots_meta_loss(tmp_path):
    rows = [MetricsRecord("meta", "meta-train", i, -1.0, 1.0, 0.1, meta_loss=5.0 - i) for i in range(4)]
    svg = render_csv(write_metrics_csv(tmp_path / "meta_loss.csv", rows))
    assert "meta-loss" in svg and len(re.findall("<polyline", svg)) == 1


def test_sweep_scatter_orders_power_against_aoi(tmp_path):
    rows = [MetricsRecord(sweep_run_id(50.0 * j), "sweep", j, -1.0, 1.5 + 0.1 * j, 2.0 - 0.15 * j)
            for j in range(11)]
    path = write_metrics_csv(tmp_path / "sweep.csv", rows)
    svg = render_csv(path)
    circles = re.findall(r'<circle cx="([\d.]+)" cy="([\d.]+)"', svg)
    assert len(circles) == 11
    xs = [float(x) for x, _ in circles]
    ys = [float(y) for _, y in circles]
    # SVG y grows downward: lower power sits lower on the page, i.e. larger cy
    assert xs == sorted(xs) and ys == sorted(ys)


def test_malformed_csv_raises_schema_error(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("run_id,phase\n")
    with pytest.raises(SchemaError, match="row 0"):
        emit_plots([path], tmp_path / "plots")


def test_emit_plots_writes_svg_per_csv(tmp_path):
    rows = [MetricsRecord("dqn", "train", i, -float(i), 1.0, 0.1) for i in range(5)]
    a = write_metrics_csv(tmp_path / "a.csv", rows)
    b = write_metrics_csv(tmp_path / "b.csv", rows)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        out = emit_plots([a, b], tmp_path / "plots")
    assert [p.name for p in out] == ["a.svg", "b.svg"]
    assert out[0].read_text() == out[1].read_text().replace("b: reward", "a: reward")


# ---------------------------------------------------------------- cli

def test_cli_runs_a_command(tmp_path, capsys):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps(TINY_RAW))
    code = cli.main(["--config", str(cfg_path), "--seed", "4", "--out", str(tmp_path / "run"), "train-dqn",
                     "--episodes", "2"])
    assert code == 0
    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert manifest["seed"] == 4 and manifest["config"]["run"]["episodes"] == 2
    assert "train:" in capsys.readouterr().out


def test_cli_flags_after_the_subcommand(tmp_path):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps(TINY_RAW))
    code = cli.main(["eval", "--config", str(cfg_path), "--out", str(tmp_path / "ev"), "--desk-scale"])
    assert code == 0
    manifest = json.loads((tmp_path / "ev" / "manifest.json").read_text())
    assert manifest["config"]["dqn"]["hidden_sizes"] == [16]
    assert manifest["config"]["mode"] == "eval"


def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main(["--config", str(tmp_path / "nope.json"), "eval"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"env": {"a_max": 0}}))
    assert cli.main(["--config", str(bad), "eval"]) == 2
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps(TINY_RAW))
    # more fine-tuning shots than the few-shot budget allows
    assert cli.main(["--config", str(cfg_path), "--out", str(tmp_path / "mt"), "meta-test", "--shots", "21"]) == 2
    assert cli.main(["no-such-command"]) == 2
    broken = tmp_path / "broken.csv"
    broken.write_text("not a metrics file\n")
    assert cli.main(["plot", str(broken), "--out", str(tmp_path / "plots")]) == 3
    capsys.readouterr()


def test_cli_plot(tmp_path, capsys):
    rows = [MetricsRecord("dqn", "train", i, -float(i), 1.0, 0.1) for i in range(3)]
    path = write_metrics_csv(tmp_path / "train.csv", rows)
    assert cli.main(["plot", str(path), "--out", str(tmp_path / "p"), "--window", "2"]) == 0
    assert (tmp_path / "p" / "train.svg").exists()
    assert "train.svg" in capsys.readouterr().out
