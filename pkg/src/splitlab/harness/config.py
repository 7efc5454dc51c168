"""Experiment configuration and named presets."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from ..attack import LOSS_VARIANTS, AttackConfig
from ..data import DATASETS
from ..dp import DpConfig
from ..nn import MODEL_PRESETS

TOY_DATASETS = ("toy-separable",)
TRANSPORTS = ("inproc", "tcp")
SERVER_MODES = ("honest", "fsha")


class ConfigError(ValueError):
    pass


@dataclass
class DpSettings:
    """Privacy settings; sampling rate and step count come from the run itself."""

    epsilon: Optional[float] = None
    noise_multiplier: Optional[float] = None
    delta: float = 1 / 60000
    clip_norm: float = 1.0
    budget_steps: Optional[int] = None  # steps the budget is sized for; defaults to iterations

    def build(self, sampling_rate: float, iterations: int) -> DpConfig:
        try:
            return DpConfig(self.delta, sampling_rate, self.budget_steps or iterations,
                            epsilon_target=self.epsilon, noise_multiplier=self.noise_multiplier,
                            clip_norm=self.clip_norm)
        except ValueError as exc:
            raise ConfigError(f"dp: {exc}") from None


@dataclass
class DefenseSettings:
    pca_k: int


@dataclass
class ExperimentConfig:
    dataset: str = "mnist"
    data_dir: Optional[str] = None
    image_size: int = 28
    n_train: Optional[int] = None  # seeded subset of the training split
    n_test: int = 10000
    model: str = "conv"
    transport: str = "inproc"
    server_mode: str = "fsha"
    dp: Optional[DpSettings] = None
    defense: Optional[DefenseSettings] = None
    excluded_classes: list = field(default_factory=list)
    iterations: int = 10000
    batch_size: int = 64
    seed: int = 0
    out_dir: str = "runs/default"
    dump_every: int = 1000
    metric_stride: int = 1
    eval_size: int = 1000
    grid_size: int = 8
    priv_fraction: float = 0.5
    lr_client: float = 1e-4
    lr_server: float = 1e-3
    attack: AttackConfig = field(default_factory=AttackConfig)
    deterministic: bool = True
    host: str = "127.0.0.1"
    port: int = 0

    def validate(self) -> None:
        if self.dataset not in DATASETS + TOY_DATASETS:
            raise ConfigError(f"unknown dataset {self.dataset!r}; expected one of {DATASETS + TOY_DATASETS}")
        if self.model not in MODEL_PRESETS:
            raise ConfigError(f"unknown model {self.model!r}; expected one of {tuple(MODEL_PRESETS)}")
        if self.transport not in TRANSPORTS:
            raise ConfigError(f"unknown transport {self.transport!r}; expected one of {TRANSPORTS}")
        if self.server_mode not in SERVER_MODES:
            raise ConfigError(f"unknown server_mode {self.server_mode!r}; expected one of {SERVER_MODES}")
        for name in ("iterations", "batch_size", "metric_stride", "dump_every", "image_size", "grid_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.iterations % self.metric_stride:
            raise ConfigError("iterations must be a multiple of metric_stride")
        if not 0 < self.priv_fraction < 1:
            raise ConfigError("priv_fraction must lie in (0, 1)")
        if self.dp is not None:
            self.dp.build(0.5, self.iterations)
        if self.defense is not None and self.defense.pca_k < 1:
            raise ConfigError("defense.pca_k must be positive")
        if self.attack.loss not in LOSS_VARIANTS:
            raise ConfigError(f"unknown attack loss {self.attack.loss!r}")

    # -- (de)serialisation ---------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = copy.deepcopy(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if d.get("dp") is not None:
                d["dp"] = DpSettings(**d["dp"])
            if d.get("defense") is not None:
                d["defense"] = DefenseSettings(**d["defense"])
            if "attack" in d:
                d["attack"] = AttackConfig(**d["attack"])
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None


# -- presets -----------------------------------------------------------------

def _base(**kw) -> ExperimentConfig:
    return ExperimentConfig(**kw)


def _experiment_presets() -> dict:
    return {
        "mnist_nodp_10k": dict(dataset="mnist", iterations=10000),
        "mnist_eps10_10k": dict(dataset="mnist", iterations=10000, dp=DpSettings(epsilon=10.0)),
        "mnist_eps100_10k": dict(dataset="mnist", iterations=10000, dp=DpSettings(epsilon=100.0)),
        "mnist_eps10_100k": dict(dataset="mnist", iterations=100000, dp=DpSettings(epsilon=10.0)),
        "mnist_eps05_100k": dict(dataset="mnist", iterations=100000, dp=DpSettings(epsilon=0.5)),
        "fmnist_excl0_100k": dict(dataset="fashion-mnist", iterations=100000, excluded_classes=[0]),
        "fmnist_excl8_100k": dict(dataset="fashion-mnist", iterations=100000, excluded_classes=[8]),
        "pca_k2": dict(dataset="mnist", iterations=10000, defense=DefenseSettings(pca_k=2)),
        "pca_k4": dict(dataset="mnist", iterations=10000, defense=DefenseSettings(pca_k=4)),
    }


DESK_IMAGE_SIZE = 14


def _desk(kw: dict) -> dict:
    kw = dict(kw)
    kw["iterations"] = kw["iterations"] // 10
    kw["image_size"] = DESK_IMAGE_SIZE
    kw["dump_every"] = 250
    return kw


def _all_presets() -> dict:
    base = _experiment_presets()
    out = dict(base)
    for name, kw in base.items():
        out[name + "_desk"] = _desk(kw)
    # the no-DP attack trend runs 3000 desk iterations
    out["mnist_nodp_desk"] = dict(_desk(base["mnist_nodp_10k"]), iterations=3000)
    out["mnist_nodp"] = dict(base["mnist_nodp_10k"])
    out["mnist_honest_desk"] = dict(dataset="mnist", server_mode="honest", model="mlp", n_train=10000,
                                    iterations=468, lr_client=1e-3, image_size=DESK_IMAGE_SIZE, dump_every=1000)
    return out


PRESETS = _all_presets()


def preset_names() -> list[str]:
    return sorted(PRESETS)


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    kw = copy.deepcopy(PRESETS[name])
    kw.setdefault("out_dir", f"runs/{name}")
    cfg = _base(**kw)
    cfg.validate()
    return cfg
