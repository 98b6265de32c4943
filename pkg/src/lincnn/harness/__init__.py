from .config import ConfigError, ExperimentConfig, build_dataset
from .figures import FIGURE_KINDS, emit_figures
from .presets import PRESETS, load_preset, preset_names
from .runner import (AggregateResult, ExperimentResult, TheoryCurves, aggregate, compare_to_theory,
                     half_rise_times, load_run, run_experiment)

__all__ = [
    "AggregateResult", "ConfigError", "ExperimentConfig", "ExperimentResult", "FIGURE_KINDS",
    "PRESETS", "TheoryCurves", "aggregate", "build_dataset", "compare_to_theory", "emit_figures",
    "half_rise_times", "load_preset", "load_run", "preset_names", "run_experiment",
]
