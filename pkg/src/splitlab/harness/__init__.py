"""Experiment driver: configs, presets, runs, image grids and the CLI."""

from .config import (
    PRESETS,
    ConfigError,
    DefenseSettings,
    DpSettings,
    ExperimentConfig,
    preset,
    preset_names,
)
from .grid import emit_grid, grid_array, read_pgm
from .runner import CSV_HEADER, DatasetMissing, ExperimentReport, prepare_data, run

__all__ = [name for name in dir() if not name.startswith("_")]
