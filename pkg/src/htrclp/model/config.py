"""Architecture, freezing and schedule configuration."""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace


class ConfigError(ValueError):
    """Inconsistent model or schedule configuration."""


@dataclass(frozen=True)
class ModelConfig:
    """CRNN shape: conv stack, 2x2 pools after ``pool_layers``, BLSTM stack, linear output.

    ``scale`` multiplies every filter count and the recurrent width.
    """

    conv_filters: tuple = (8, 16, 24, 32, 40)
    pool_layers: tuple = (0, 1, 2)
    recurrent_layers: int = 2
    recurrent_units: int = 64
    dropout_conv: float = 0.2
    dropout_recurrent: float = 0.5
    input_height: int = 32
    charset_size: int = 27
    scale: float = 1.0
    leaky_slope: float = 0.01
    kernel: int = 3

    def __post_init__(self):
        object.__setattr__(self, "conv_filters", tuple(int(f) for f in self.conv_filters))
        object.__setattr__(self, "pool_layers", tuple(sorted(int(p) for p in self.pool_layers)))
        self.validate()

    def validate(self) -> None:
        if len(self.conv_filters) < 1:
            raise ConfigError("at least one convolutional layer is required")
        if any(p < 0 or p >= len(self.conv_filters) for p in self.pool_layers):
            raise ConfigError(f"pool_layers {self.pool_layers} must index conv layers")
        if len(set(self.pool_layers)) != len(self.pool_layers):
            raise ConfigError("pool_layers contains duplicates")
        if self.input_height % self.downsample:
            raise ConfigError(f"input height {self.input_height} is not divisible by 2^{len(self.pool_layers)}")
        if self.recurrent_layers < 0 or self.charset_size < 1 or self.scale <= 0:
            raise ConfigError("recurrent_layers >= 0, charset_size >= 1 and scale > 0 are required")
        if not (0 <= self.dropout_conv < 1 and 0 <= self.dropout_recurrent < 1):
            raise ConfigError("dropout rates must lie in [0, 1)")

    @property
    def downsample(self) -> int:
        return 2 ** len(self.pool_layers)

    @property
    def filters(self) -> tuple:
        return tuple(max(1, int(round(f * self.scale))) for f in self.conv_filters)

    @property
    def units(self) -> int:
        return max(1, int(round(self.recurrent_units * self.scale)))

    @property
    def feature_height(self) -> int:
        return self.input_height // self.downsample

    @property
    def collapse_depth(self) -> int:
        return self.feature_height * self.filters[-1]

    @property
    def n_classes(self) -> int:
        return self.charset_size + 1

    def with_charset_size(self, n: int) -> "ModelConfig":
        return replace(self, charset_size=n)


DESK = ModelConfig()
PAPER = ModelConfig(conv_filters=(16, 32, 48, 64, 80), recurrent_layers=5, recurrent_units=256,
                    input_height=64, charset_size=102)


class FreezeSpec(enum.Enum):
    """Prefix of convolutional layers whose parameters are kept fixed."""

    ALL_FREE = 0
    FIX_CONV1 = 1
    FIX_CONV12 = 2
    FIX_CONV123 = 3

    @property
    def n_frozen(self) -> int:
        return self.value

    @classmethod
    def parse(cls, text: str) -> "FreezeSpec":
        names = {"all-free": cls.ALL_FREE, "cnn1": cls.FIX_CONV1, "cnn12": cls.FIX_CONV12,
                 "cnn123": cls.FIX_CONV123}
        try:
            return names[text]
        except KeyError:
            raise ConfigError(f"unknown freeze spec {text!r}; choose from {sorted(names)}") from None

    def frozen_params(self, config: ModelConfig) -> frozenset:
        if self.n_frozen > len(config.conv_filters):
            raise ConfigError(f"{self.name} needs {self.n_frozen} conv layers, model has {len(config.conv_filters)}")
        return frozenset(f"conv{i}.{p}" for i in range(1, self.n_frozen + 1) for p in ("weight", "bias"))


@dataclass(frozen=True)
class TrainSchedule:
    max_epochs: int = 30
    batch_size: int = 16
    patience: int = 5
    seed: int = 0
    lr: float = 1e-3
    optimizer: str = "adam"
    clip_norm: float | None = 5.0

    def __post_init__(self):
        if self.max_epochs < 0 or self.batch_size < 1:
            raise ConfigError("max_epochs >= 0 and batch_size >= 1 are required")
        if not 0 < self.patience <= max(self.max_epochs, 1):
            raise ConfigError(f"patience {self.patience} must lie in [1, max_epochs={self.max_epochs}]")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
