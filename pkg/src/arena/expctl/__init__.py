"""Experiment control: configs, presets, seeded runs, metrics and output files."""
from arena.expctl.config import AgentSpec, RunConfig, dump_config, load_config
from arena.expctl.metrics import convergence_episode, incentive_probe, windowed_rate
from arena.expctl.presets import PRESETS, get_preset
from arena.expctl.runner import RunRecords, RunSummary, emit_outputs, run_experiment, run_seeds

__all__ = ["AgentSpec", "RunConfig", "RunRecords", "RunSummary", "PRESETS", "convergence_episode",
           "dump_config", "emit_outputs", "get_preset", "incentive_probe", "load_config",
           "run_experiment", "run_seeds", "windowed_rate"]
