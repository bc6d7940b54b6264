"""Run configuration: dataclass defaults plus a strict JSON round-trip."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    img_size: int = 64
    patch: int = 4
    embed_dim: int = 32          # C
    levels: int = 4              # M
    c_prime: int = 32            # C'
    space_size: int = 16         # K
    heads: int = 4
    num_blocks: int = 4
    rec_grid: int = 4
    num_classes: int = 4
    warmup_fraction: float = 0.3
    rec_weight: float = 0.4      # lambda
    ema_alpha: float = 0.9
    support_factor: float = 1.0
    pia_layers: int = 1
    resample: bool = False
    pointness_window: int = 5
    pointness_kappa: float = 0.05
    seed: int = 0
    epochs: int = 20
    batch_size: int = 16
    learning_rate: float = 1e-3
    baseline: bool = False

    def validate(self) -> "ModelConfig":
        if self.img_size % self.patch:
            raise ConfigError(f"img_size {self.img_size} is not a multiple of patch {self.patch}")
        if self.embed_dim % 2 or self.embed_dim % self.heads or self.c_prime % self.heads:
            raise ConfigError("embed_dim must be even and embed_dim, c_prime divisible by heads")
        if self.levels < 2:
            raise ConfigError("levels must be >= 2")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ConfigError("warmup_fraction must lie in [0, 1]")
        if not 0.0 < self.ema_alpha < 1.0:
            raise ConfigError("ema_alpha must lie in (0, 1)")
        if self.support_factor < 1.0:
            raise ConfigError("support_factor must be >= 1")
        for name in ("epochs", "batch_size", "num_blocks", "space_size", "num_classes", "pia_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        return self

    @property
    def grid(self) -> int:
        return self.img_size // self.patch


@dataclass
class RunConfig(ModelConfig):
    data: str = "data/dataset.bin"
    out_dir: str = "runs/default"
    n_train: int = 2000
    n_test: int = 500
    warp_train: float = 0.1
    warp_test: float = 0.4
    threads: int = 1

    def model_config(self) -> ModelConfig:
        names = {f.name for f in fields(ModelConfig)}
        return ModelConfig(**{k: v for k, v in asdict(self).items() if k in names})


def to_json(cfg) -> str:
    return json.dumps(asdict(cfg), indent=2, sort_keys=True)


def from_dict(cls, doc: dict):
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(doc) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    values = {}
    for key, val in doc.items():
        default = known[key].default
        if isinstance(default, bool):
            if not isinstance(val, bool):
                raise ConfigError(f"{key}: expected a boolean, got {val!r}")
        elif isinstance(default, int):
            if isinstance(val, bool) or not isinstance(val, int):
                raise ConfigError(f"{key}: expected an integer, got {val!r}")
        elif isinstance(default, float):
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ConfigError(f"{key}: expected a number, got {val!r}")
            val = float(val)
        elif isinstance(default, str) and not isinstance(val, str):
            raise ConfigError(f"{key}: expected a string, got {val!r}")
        values[key] = val
    return cls(**values)


def from_json(cls, text: str):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    return from_dict(cls, doc)


def load_config(path, cls=RunConfig):
    return from_json(cls, Path(path).read_text())


def save_config(path, cfg) -> None:
    Path(path).write_text(to_json(cfg) + "\n")
