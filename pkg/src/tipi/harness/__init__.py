"""Experiment harness: configuration, seeded runs, sweeps, presets and the CLI."""
from .config import ExperimentConfig
from .runner import SweepSpec, build_plant, derive_seed, export, run, sweep, sweep_raw, sweep_metric
