"""Model configuration."""

import math
from dataclasses import dataclass, field, asdict

from .errors import ConfigError


def default_tap_layers(depth: int, num_levels: int) -> tuple:
    """Evenly spaced tap points (1-based block indices) ending at the last block."""
    taps = tuple(math.ceil(depth * (l + 1) / num_levels) for l in range(num_levels))
    return taps


@dataclass(frozen=True)
class ModelConfig:
    """Hyper-parameters of the shared matching model.

    Desk-scale defaults: 64x64 inputs with patch 8 (64 tokens per modality),
    a 6-block encoder at width 192, 4 feature levels, 64 decoder channels.
    ``full_scale()`` gives the large configuration (224x224, patch 16,
    256 decoder channels).
    """

    embed_dim: int = 192
    depth: int = 6
    num_heads: int = 4
    patch_size: tuple = (8, 8)
    num_levels: int = 4
    tap_layers: tuple = None
    label_depth: int = None
    matching_heads: int = 4
    decoder_dim: int = 64
    mlp_ratio: float = 4.0
    train_resolution: tuple = (64, 64)
    # Which additive bias vectors of an encoder block become task-specific.
    # "all" covers both attention and MLP paths; narrower choices exist for
    # ablation ("attn", "mlp").
    bias_tuning: str = "all"

    def __post_init__(self):
        if self.tap_layers is None:
            object.__setattr__(
                self, "tap_layers", default_tap_layers(self.depth, self.num_levels)
            )
        if self.label_depth is None:
            object.__setattr__(self, "label_depth", self.depth)
        object.__setattr__(self, "patch_size", tuple(self.patch_size))
        object.__setattr__(self, "tap_layers", tuple(self.tap_layers))
        object.__setattr__(self, "train_resolution", tuple(self.train_resolution))
        self.validate()

    def validate(self):
        if self.embed_dim % self.num_heads:
            raise ConfigError("embed_dim must be divisible by num_heads")
        if self.embed_dim % self.matching_heads:
            raise ConfigError("embed_dim must be divisible by matching_heads")
        if len(self.tap_layers) != self.num_levels:
            raise ConfigError("need one tap layer per level")
        if list(self.tap_layers) != sorted(set(self.tap_layers)):
            raise ConfigError("tap_layers must be strictly increasing")
        if self.tap_layers[-1] > self.depth or self.tap_layers[0] < 1:
            raise ConfigError("tap_layers must lie in [1, depth]")
        if self.bias_tuning not in ("all", "attn", "mlp"):
            raise ConfigError(f"unknown bias_tuning mode {self.bias_tuning!r}")
        h, w = self.train_resolution
        ph, pw = self.patch_size
        if h % ph or w % pw:
            raise ConfigError("train_resolution must be divisible by patch_size")
        # Pyramid strides {p/4, p/2, p, 2p} need the patch divisible by 4.
        if ph % 4 or pw % 4:
            raise ConfigError("patch_size must be divisible by 4")

    @classmethod
    def full_scale(cls) -> "ModelConfig":
        return cls(
            embed_dim=1024,
            depth=24,
            num_heads=16,
            patch_size=(16, 16),
            num_levels=4,
            matching_heads=16,
            decoder_dim=256,
            train_resolution=(224, 224),
        )

    def label_tap_layers(self) -> tuple:
        if self.label_depth == self.depth:
            return self.tap_layers
        return default_tap_layers(self.label_depth, self.num_levels)

    def grid(self, resolution=None) -> tuple:
        h, w = resolution if resolution is not None else self.train_resolution
        ph, pw = self.patch_size
        if h % ph or w % pw:
            raise ConfigError(f"resolution {(h, w)} not divisible by patch {self.patch_size}")
        return h // ph, w // pw

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)
