"""Bundled experiment settings for the pure-cosine, sums-of-cosines and geometric-shape runs."""
from __future__ import annotations

import copy

from .config import ExperimentConfig

PRESETS = {
    "pure-cosines-4class": {
        "name": "pure-cosines-4class",
        "dataset": {"generator": "pure-cosines"},
        "model": "both",
        "init": {"kind": "aligned", "sigma": 1e-5},
        # framework loss (1/p) with lr 1/2000 equals the 0.5-sum loss with lr 1/4000
        "train": {"lr": 1 / 2000, "loss_mode": "framework", "updates": 8000,
                  "sampling": "shuffle", "record_every": 10},
        "trials": {"count": 10, "base_seed": 0},
        "outputs": {"diagnostics": ["balancedness", "minimal_norm"]},
        "theory_overlay": True,
    },
    "sums-of-cosines-2class": {
        "name": "sums-of-cosines-2class",
        "dataset": {"generator": "sums-of-cosines"},
        "model": "cnn",
        "init": {"kind": "random", "sigma": 1e-5},
        "train": {"lr": 1e-4, "loss_mode": "framework", "updates": 600,
                  "sampling": "shuffle", "record_every": 5,
                  "spectrum_indices": [197, 450, 3710, 3963, 73, 332, 3828, 4087]},
        "trials": {"count": 10, "base_seed": 0},
        "outputs": {"diagnostics": ["dominant", "minimal_norm", "balancedness"]},
        "theory_overlay": False,
    },
    "geometric-shapes-4class": {
        "name": "geometric-shapes-4class",
        "dataset": {"generator": "geometric-shapes", "params": {"n": 64}},
        "model": "cnn",
        "init": {"kind": "random", "sigma": 1e-5},
        "train": {"lr": 1 / 20000, "loss_mode": "framework", "updates": 60000,
                  "sampling": "shuffle", "record_every": 100, "spectrum_indices": []},
        "trials": {"count": 10, "base_seed": 0},
        "outputs": {"diagnostics": ["dominant"]},
        "theory_overlay": False,
    },
}


def preset_names() -> list[str]:
    return sorted(PRESETS)


def preset_dict(name: str) -> dict:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return copy.deepcopy(PRESETS[name])


def load_preset(name: str, **overrides) -> ExperimentConfig:
    """Preset as an ``ExperimentConfig``; keyword overrides replace top-level fields."""
    cfg = ExperimentConfig.from_dict(preset_dict(name))
    for k, v in overrides.items():
        if not hasattr(cfg, k):
            raise KeyError(f"unknown config field {k!r}")
        setattr(cfg, k, v)
    cfg.__post_init__()
    return cfg
