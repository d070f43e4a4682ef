"""Command-line entry point.

    uavmeta [--config FILE] [--seed N] [--out DIR] [--desk-scale | --paper-scale] COMMAND ...

Exit status: 0 on success, 2 for configuration errors, 3 for runtime errors.
"""

from __future__ import annotations

import argparse
import logging
import sys

from ..errors import ConfigError, ConstraintError
from . import config as config_mod
from .experiments import run_experiment
from .plots import DEFAULT_WINDOW, emit_plots

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("uavmeta")


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="JSON experiment config or run manifest")
    parser.add_argument("--seed", type=int, default=default, help="master seed (overrides the config)")
    parser.add_argument("--out", default=default, help="output directory (overrides the config)")
    scale = parser.add_mutually_exclusive_group()
    scale.add_argument("--desk-scale", dest="preset", action="store_const", const="desk", default=default,
                       help="scaled-down defaults under the config's own values")
    scale.add_argument("--paper-scale", dest="preset", action="store_const", const="paper", default=default,
                       help="full-size defaults under the config's own values")
    parser.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uavmeta", description="DQN and meta-learned DQN for UAV scheduling.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "train-dqn": "train one DQN agent on the configured environment",
        "meta-train": "meta-train an initialization over the training tasks",
        "meta-test": "fine-tune a checkpoint (and a random init) on the test tasks",
        "eval": "score a checkpoint and the heuristic baselines",
        "sweep": "train one agent per test lambda and record AoI / power",
        "plot": "render metrics CSVs as SVG",
    }
    for name, help_text in commands.items():
        p = sub.add_parser(name, help=help_text)
        _global_flags(p, suppress=True)
        if name in ("meta-test", "eval", "train-dqn"):
            p.add_argument("--checkpoint", help="initial or evaluated parameter file")
        if name in ("train-dqn", "sweep"):
            p.add_argument("--episodes", type=int, help="training episodes (per task for sweep)")
        if name == "meta-test":
            p.add_argument("--shots", type=int, help="fine-tuning episodes per task")
        if name == "meta-train":
            p.add_argument("--epochs", type=int, help="meta-training epochs")
            p.add_argument("--workers", type=int, help="processes for per-task work")
        if name == "plot":
            p.add_argument("csv", nargs="+", help="metrics CSV files")
            p.add_argument("--window", type=int, default=DEFAULT_WINDOW, help="moving-average window")
    return parser


def _overrides(args) -> dict:
    out: dict = {"mode": args.command}
    if args.seed is not None:
        out["seed"] = args.seed
    if args.out is not None:
        out["output_dir"] = args.out
    run = {}
    for key in ("checkpoint", "episodes", "shots", "workers"):
        value = getattr(args, key, None)
        if value is not None:
            run[key] = value
    if run:
        out["run"] = run
    if getattr(args, "epochs", None) is not None:
        out["meta"] = {"epochs": args.epochs}
    return out


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        if args.command == "plot":
            out = args.out or "plots"
            for path in emit_plots(args.csv, out, args.window):
                print(path)
            return EXIT_OK
        overrides = _overrides(args)
        if args.config:
            cfg = config_mod.load_config(args.config, args.preset, overrides)
        else:
            cfg = config_mod.build_config(None, args.preset, overrides)
        result = run_experiment(cfg)
    except (ConfigError, ConstraintError) as exc:
        print(f"uavmeta: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - every other failure maps to one exit code
        print(f"uavmeta: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for name, path in sorted(result.artifacts.items()):
        print(f"{name}: {path}")
    return result.status


if __name__ == "__main__":
    sys.exit(main())
