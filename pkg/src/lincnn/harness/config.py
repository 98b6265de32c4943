"""Experiment configuration: a nested mapping read from YAML and validated up front."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .. import datasets as ds
from ..models import LOSS_MODES, SAMPLING_POLICIES, TrainConfig

GENERATORS = ("pure-cosines", "sums-of-cosines", "geometric-shapes", "file")
MODELS = ("cnn", "fcnn", "both")
INIT_KINDS = ("random", "aligned")
DIAGNOSTICS = ("balancedness", "dominant", "minimal_norm")


class ConfigError(ValueError):
    pass


def _terms(raw):
    out = []
    for t in raw:
        if isinstance(t, dict):
            out.append(ds.CosineTerm(**t))
        else:
            out.append(ds.CosineTerm(*t))
    return tuple(out)


def build_dataset(generator: str, params: dict | None = None):
    """Return ``(dataset, cosine_spec_or_None)`` for a generator name and its parameters."""
    params = dict(params or {})
    try:
        if generator == "pure-cosines":
            spec = ds.pure_cosines_default() if not params else ds.CosineSpec.pure(
                params.pop("n"), params.pop("pairs"), params.pop("amplitudes"), params.pop("phases", None))
            d = ds.gen_pure_cosines(spec)
        elif generator == "sums-of-cosines":
            spec = ds.sums_of_cosines_default() if not params else ds.CosineSpec(
                params.pop("n"), tuple(_terms(c) for c in params.pop("classes")),
                params.pop("disjoint", True))
            d = ds.gen_sums_of_cosines(spec)
        elif generator == "geometric-shapes":
            spec = None
            d = ds.gen_geometric_shapes(params.pop("n", 64), params.pop("diameter", 0.7))
        elif generator == "file":
            spec = None
            d = ds.load_dataset(params.pop("path"))
        else:
            raise ConfigError(f"unknown dataset generator {generator!r}; choose from {GENERATORS}")
    except KeyError as exc:
        raise ConfigError(f"dataset parameter {exc} missing for generator {generator!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad dataset parameters: {exc}") from None
    if params:
        raise ConfigError(f"unknown dataset parameters {sorted(params)}")
    return d, spec


@dataclass
class ExperimentConfig:
    name: str
    generator: str
    dataset_params: dict = field(default_factory=dict)
    model: str = "cnn"
    init: str = "random"
    sigma: float = 1e-5
    lr: float = 1e-4
    lr_fcnn: float | None = None  # defaults to n * lr
    loss_mode: str = "theory"
    updates: int = 1000
    sampling: str = "shuffle"
    record_every: int | None = None  # defaults by image size
    loss_window: int = 50
    spectrum_indices: list | None = None
    trials: int = 1
    base_seed: int = 0
    out_dir: str | None = None
    diagnostics: list = field(default_factory=list)
    theory_overlay: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ConfigError(f"unknown dataset generator {self.generator!r}")
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}")
        if self.init not in INIT_KINDS:
            raise ConfigError(f"init must be one of {INIT_KINDS}")
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(f"loss_mode must be one of {LOSS_MODES}")
        if self.sampling not in SAMPLING_POLICIES:
            raise ConfigError(f"sampling must be one of {SAMPLING_POLICIES}")
        if not self.sigma > 0:
            raise ConfigError("sigma must be > 0")
        if self.lr < 0 or (self.lr_fcnn is not None and self.lr_fcnn < 0):
            raise ConfigError("learning rates must be >= 0")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.updates < 0:
            raise ConfigError("updates must be >= 0")
        if self.record_every is not None and self.record_every < 1:
            raise ConfigError("record_every must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        bad = set(self.diagnostics) - set(DIAGNOSTICS)
        if bad:
            raise ConfigError(f"unknown diagnostics {sorted(bad)}")

    # ----- derived settings

    def record_cadence(self, n: int) -> int:
        if self.record_every is not None:
            return self.record_every
        if self.generator == "file":
            return 500
        return 10 if n <= 16 else 100

    def fcnn_lr(self, n: int) -> float:
        return n * self.lr if self.lr_fcnn is None else self.lr_fcnn

    def train_config(self, model: str, n: int, seed: int) -> TrainConfig:
        lr = self.lr if model == "cnn" else self.fcnn_lr(n)
        spec_idx = None if self.spectrum_indices is None else tuple(self.spectrum_indices)
        return TrainConfig(lr=lr, updates=self.updates, loss_mode=self.loss_mode, sampling=self.sampling,
                           seed=seed, record_every=self.record_cadence(n), loss_window=self.loss_window,
                           spectrum_indices=spec_idx)

    def seeds(self) -> list[int]:
        return [self.base_seed + i for i in range(self.trials)]

    # ----- (de)serialization

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "dataset": {"generator": self.generator, "params": copy.deepcopy(self.dataset_params)},
            "model": self.model,
            "init": {"kind": self.init, "sigma": self.sigma},
            "train": {"lr": self.lr, "lr_fcnn": self.lr_fcnn, "loss_mode": self.loss_mode,
                      "updates": self.updates, "sampling": self.sampling,
                      "record_every": self.record_every, "loss_window": self.loss_window,
                      "spectrum_indices": self.spectrum_indices},
            "trials": {"count": self.trials, "base_seed": self.base_seed},
            "outputs": {"dir": self.out_dir, "diagnostics": list(self.diagnostics)},
            "theory_overlay": self.theory_overlay,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        raw = copy.deepcopy(raw)
        known = {"name", "dataset", "model", "init", "train", "trials", "outputs", "theory_overlay", "workers"}
        extra = set(raw) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        dset = raw.get("dataset") or {}
        if "generator" not in dset:
            raise ConfigError("dataset.generator is required")
        init = raw.get("init") or {}
        train = raw.get("train") or {}
        trials = raw.get("trials") or {}
        outputs = raw.get("outputs") or {}
        for sect, keys, allowed in (
                ("dataset", dset, {"generator", "params"}),
                ("init", init, {"kind", "sigma"}),
                ("train", train, {"lr", "lr_fcnn", "loss_mode", "updates", "sampling", "record_every",
                                  "loss_window", "spectrum_indices"}),
                ("trials", trials, {"count", "base_seed"}),
                ("outputs", outputs, {"dir", "diagnostics"})):
            if not isinstance(keys, dict):
                raise ConfigError(f"{sect} must be a mapping")
            bad = set(keys) - allowed
            if bad:
                raise ConfigError(f"unknown keys in {sect}: {sorted(bad)}")
        if "lr" not in train or "updates" not in train:
            raise ConfigError("train.lr and train.updates are required")
        try:
            return cls(
                name=str(raw.get("name", "experiment")),
                generator=dset["generator"],
                dataset_params=dset.get("params") or {},
                model=raw.get("model", "cnn"),
                init=init.get("kind", "random"),
                sigma=float(init.get("sigma", 1e-5)),
                lr=float(train["lr"]),
                lr_fcnn=None if train.get("lr_fcnn") is None else float(train["lr_fcnn"]),
                loss_mode=train.get("loss_mode", "theory"),
                updates=int(train["updates"]),
                sampling=train.get("sampling", "shuffle"),
                record_every=train.get("record_every"),
                loss_window=int(train.get("loss_window", 50)),
                spectrum_indices=train.get("spectrum_indices"),
                trials=int(trials.get("count", 1)),
                base_seed=int(trials.get("base_seed", 0)),
                out_dir=outputs.get("dir"),
                diagnostics=list(outputs.get("diagnostics") or []),
                theory_overlay=bool(raw.get("theory_overlay", False)),
                workers=int(raw.get("workers", 1)),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_yaml(cls, text: str) -> "ExperimentConfig":
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config is not valid YAML: {exc}") from None
        return cls.from_dict(raw)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_yaml(Path(path).read_text())

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)
