"""Flat ``key = value`` run configuration (model and training keys)."""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .model import PRESETS, ModelConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainRunConfig:
    epochs: int = 100
    steps: int = 0
    batch_size: int = 4
    lr: float = 1e-4
    seed: int = 0
    ckpt_every: int = 100
    workers: int = 1
    init_seed: int = 0

    def __post_init__(self):
        for f in ("epochs", "batch_size", "ckpt_every", "workers"):
            if getattr(self, f) < 1:
                raise ConfigError(f"{f} must be positive")
        if self.steps < 0 or self.lr < 0:
            raise ConfigError("steps and lr must be non-negative")


MODEL_KEYS = {"N", "C", "K", "H", "L", "taps", "mlp_ratio", "stages", "widths", "D", "tsdf_channels",
              "side_length"}
_LIST_KEYS = {"taps", "widths"}


def parse_config(text: str) -> tuple[ModelConfig, TrainRunConfig]:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        raw[key] = value
    preset = raw.pop("preset", "toy")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    model = PRESETS[preset]().to_dict()
    train_fields = {f.name: f.type for f in fields(TrainRunConfig)}
    train = {}
    try:
        for key, value in raw.items():
            if key in MODEL_KEYS:
                model[key] = [int(v) for v in value.split(",") if v.strip()] if key in _LIST_KEYS else \
                    float(value) if key == "side_length" else int(value)
            elif key in train_fields:
                train[key] = float(value) if key == "lr" else int(value)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        return ModelConfig.from_dict(model), TrainRunConfig(**train)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> tuple[ModelConfig, TrainRunConfig]:
    return parse_config(Path(path).read_text())
