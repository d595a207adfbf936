"""Dataclass configs for training and the CLI.

Defaults follow the reference recipe: 32 heads, 768-wide shared space,
lr 1e-4, batch 64, dropout 0.3 on the time-pooled modalities, 0.1 on text,
0.2 on the fused adapter output and inside the heads.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any

from .errors import ConfigError
from .pooling import PoolingConfig

SCORE_MIN = 1.0
SCORE_MAX = 5.0

# Default declared feature widths per modality.
DEFAULT_DIMS = {"video": 1152, "audio": 768, "text": 4096}


@dataclass
class DropoutRates:
    temporal: float = 0.3   # pooled video/audio vectors, at fusion input
    text: float = 0.1       # text vector, at fusion input
    adapter: float = 0.2    # fused feature, before the heads
    head: float = 0.2       # inside each regression head

    def validate(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not 0.0 <= v < 1.0:
                raise ConfigError(f"dropout.{f.name} must be in [0, 1), got {v}")

    def fusion_rates(self) -> dict[str, float]:
        return {"video": self.temporal, "audio": self.temporal, "text": self.text}


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 64
    max_epochs: int = 100
    early_stop_patience: int | None = 10
    kfold: int = 5
    seed: int = 0
    head_count: int = 32
    hidden_dim: int = 256
    basis_count: int = 768
    shared_dim: int = 768
    pooling: PoolingConfig = field(default_factory=PoolingConfig)
    dropout: DropoutRates = field(default_factory=DropoutRates)
    clamp_at_inference: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    # Optional stop once inference-mode train MSE falls below this value.
    train_mse_target: float | None = None

    def validate(self) -> None:
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 0:
            raise ConfigError(f"max_epochs must be >= 0, got {self.max_epochs}")
        if self.kfold < 2:
            raise ConfigError(f"kfold must be >= 2, got {self.kfold}")
        for name in ("head_count", "hidden_dim", "basis_count", "shared_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.early_stop_patience is not None and self.early_stop_patience < 1:
            raise ConfigError(
                f"early_stop_patience must be >= 1 or null, got {self.early_stop_patience}")
        self.dropout.validate()

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrainConfig":
        """Strict constructor: unknown keys are rejected at every level."""
        cfg = cls()
        cfg = _apply_overrides(cfg, data)
        cfg.validate()
        return cfg

    def with_overrides(self, overrides: dict[str, Any]) -> "TrainConfig":
        cfg = _apply_overrides(self, overrides)
        cfg.validate()
        return cfg


def _apply_overrides(cfg: TrainConfig, data: dict[str, Any]) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    updates: dict[str, Any] = {}
    for key, value in data.items():
        if key == "pooling":
            if not isinstance(value, dict):
                raise ConfigError("pooling must be a mapping {video, audio}")
            bad = set(value) - {"video", "audio"}
            if bad:
                raise ConfigError(f"unknown pooling keys: {sorted(bad)}")
            updates[key] = replace(cfg.pooling, **value)
        elif key == "dropout":
            if not isinstance(value, dict):
                raise ConfigError("dropout must be a mapping {temporal, text, adapter, head}")
            bad = set(value) - {f.name for f in fields(DropoutRates)}
            if bad:
                raise ConfigError(f"unknown dropout keys: {sorted(bad)}")
            updates[key] = replace(cfg.dropout, **value)
        else:
            updates[key] = value
    return replace(cfg, **updates)
