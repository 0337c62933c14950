"""Flat, dotted-key run configuration shared by the CLI, scripts and experiment snapshots."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .optim import LossConfig, LrSchedule
from .preprocess import PreprocessConfig


class ConfigError(ValueError):
    pass


def derive_seed(base_seed: int, key: str) -> int:
    """Deterministic 63-bit seed for ``key`` under ``base_seed`` (BLAKE2b of ``"<seed>:<key>"``)."""
    digest = hashlib.blake2b(f"{int(base_seed)}:{key}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 750
    batch_size: int | None = 32  # None = full batch
    seed: int = 0
    loss: LossConfig = LossConfig()
    schedule: LrSchedule = LrSchedule()
    shuffle_each_epoch: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    xavier_fans: str = "mask"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.xavier_fans not in ("mask", "dense"):
            raise ConfigError(f"xavier_fans must be 'mask' or 'dense', got {self.xavier_fans!r}")


# every accepted key with its default; training defaults are the reference hyper-parameters
DEFAULTS: dict[str, object] = {
    "seed": 0,
    "data.root": "data",
    "data.user": "a",
    "data.marker": "affirmative",
    "data.synthetic": False,
    "model.preset": "structured",
    "model.xavier_fans": "mask",
    "train.epochs": 750,
    "train.batch_size": 32,
    "train.shuffle_each_epoch": True,
    "loss.kind": "ce",
    "loss.reg_beta": 0.05,
    "schedule.initial_rate": 0.01,
    "schedule.decay_ratio": 0.9,
    "schedule.decay_step": 7000,
    "adam.beta1": 0.9,
    "adam.beta2": 0.999,
    "adam.epsilon": 1e-8,
    "preprocess.test_fraction": 0.30,
    "preprocess.balance": True,
    "preprocess.balance_order": "before",
    "preprocess.fit_stats_on": "train",
    "synth.n_positive": 200,
    "synth.n_negative": 200,
    "synth.signal_regions": "Mouth",
    "synth.signal_strength": 1.0,
    "synth.placeholder_fraction": 0.01,
    "bench.markers": "all",
    "bench.users": "a",
    "bench.presets": "structured,fc",
    "bench.multiclass": "",
    "bench.combos": "default",
}

_CHOICES = {
    "data.user": ("a", "b", "ab"),
    "model.preset": ("structured", "fc"),
    "model.xavier_fans": ("mask", "dense"),
    "loss.kind": ("ce", "mse"),
    "preprocess.balance_order": ("before", "after"),
    "preprocess.fit_stats_on": ("train", "all"),
}


def _coerce(key: str, value):
    default = DEFAULTS[key]
    if key == "train.batch_size":
        if value in (None, "all", 0):
            return "all"
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected integer or 'all', got {value!r}") from None
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if str(value).lower() in ("1", "true", "yes", "on"):
            return True
        if str(value).lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected boolean, got {value!r}")
    try:
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if isinstance(default, float):
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}") from None
    value = str(value)
    if key in _CHOICES and value not in _CHOICES[key]:
        raise ConfigError(f"{key}: must be one of {_CHOICES[key]}, got {value!r}")
    return value


@dataclass(frozen=True)
class RunConfig:
    values: dict

    @classmethod
    def build(cls, *layers: dict) -> "RunConfig":
        """Defaults, then each layer in order (later wins). Unknown keys are rejected."""
        merged = dict(DEFAULTS)
        for layer in layers:
            for key, value in layer.items():
                if key not in DEFAULTS:
                    raise ConfigError(f"unknown config key {key!r}")
                merged[key] = _coerce(key, value)
        cfg = cls(merged)
        cfg.train_config()  # validates numeric ranges
        cfg.preprocess_config()
        return cfg

    @classmethod
    def from_file(cls, path) -> dict:
        """Read a config layer; a report JSON's ``config`` section is accepted too."""
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if isinstance(doc, dict) and isinstance(doc.get("config"), dict):
            doc = doc["config"]
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return doc

    def __getitem__(self, key: str):
        return self.values[key]

    def replace(self, **overrides) -> "RunConfig":
        return RunConfig.build(self.values, {k.replace("__", "."): v for k, v in overrides.items()})

    def with_values(self, layer: dict) -> "RunConfig":
        return RunConfig.build(self.values, layer)

    def snapshot(self) -> dict:
        return dict(sorted(self.values.items()))

    def to_json(self) -> str:
        return json.dumps(self.snapshot(), indent=2, sort_keys=True) + "\n"

    def loss_config(self) -> LossConfig:
        return LossConfig(self["loss.kind"], self["loss.reg_beta"])

    def schedule(self) -> LrSchedule:
        try:
            return LrSchedule(self["schedule.initial_rate"], self["schedule.decay_ratio"], self["schedule.decay_step"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def train_config(self, seed: int | None = None) -> TrainConfig:
        bs = self["train.batch_size"]
        try:
            return TrainConfig(
                epochs=self["train.epochs"],
                batch_size=None if bs == "all" else bs,
                seed=self["seed"] if seed is None else seed,
                loss=self.loss_config(),
                schedule=self.schedule(),
                shuffle_each_epoch=self["train.shuffle_each_epoch"],
                beta1=self["adam.beta1"],
                beta2=self["adam.beta2"],
                epsilon=self["adam.epsilon"],
                xavier_fans=self["model.xavier_fans"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def preprocess_config(self) -> PreprocessConfig:
        try:
            return PreprocessConfig(
                test_fraction=self["preprocess.test_fraction"],
                balance=self["preprocess.balance"],
                balance_order=self["preprocess.balance_order"],
                fit_stats_on=self["preprocess.fit_stats_on"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

