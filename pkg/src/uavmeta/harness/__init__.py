"""Configuration, experiment orchestration, baselines, plotting and the CLI."""

from .baselines import BaselineKind, baseline_policy
from .config import ExperimentConfig, Mode, build_config, load_config, save_config
from .experiments import RunResult, run_experiment
from .plots import emit_plots

__all__ = ["BaselineKind", "baseline_policy", "ExperimentConfig", "Mode", "build_config", "load_config",
           "save_config", "RunResult", "run_experiment", "emit_plots"]
