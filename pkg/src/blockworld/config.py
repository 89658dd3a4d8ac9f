"""Run configuration shared by the model builder, trainer, and CLI."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from .alignment import ATTENTION_VARIANTS
from .target import DEFAULT_ANNEAL_SAMPLES, DEFAULT_OFFSET_SIGMA

INFERENCE_MODES = ("expectation", "sampling")
FEATURE_SETS = ("full", "coords")
BASELINE_KINDS = ("none", "linear")


@dataclass
class TrainConfig:
    # Model structure
    attention: str = "cnn"  # last_hidden | cnn | dual
    inference: str = "expectation"  # expectation | sampling
    joint: bool = True
    features: str = "full"  # full | coords
    word_dim: int = 256
    hidden_dim: int = 256
    block_dim: int = 64
    cnn_widths: tuple[int, ...] = (2, 3, 4, 5)
    cnn_filters: int = 64
    offset_hidden: int = 64
    sigma_o: float = DEFAULT_OFFSET_SIGMA

    # Optimization
    learning_rate: float = 0.001
    clip_norm: float = 5.0
    weight_decay: float = 1e-5
    dropout: float = 0.2
    batch_size: int = 32
    epochs: int = 10
    baseline: str = "linear"  # none | linear
    anneal_samples: tuple[int, ...] = DEFAULT_ANNEAL_SAMPLES
    anneal_epochs_per_stage: int = 2

    # Data handling
    local_sigma: float = 0.1
    global_sigma: float = 1.0
    block_length: float = 1.0
    max_blocks: int = 20

    # Run control
    ensemble_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.attention not in ATTENTION_VARIANTS:
            raise ValueError(f"attention must be one of {ATTENTION_VARIANTS}")
        if self.inference not in INFERENCE_MODES:
            raise ValueError(f"inference must be one of {INFERENCE_MODES}")
        if self.features not in FEATURE_SETS:
            raise ValueError(f"features must be one of {FEATURE_SETS}")
        if self.baseline not in BASELINE_KINDS:
            raise ValueError(f"baseline must be one of {BASELINE_KINDS}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        for name in ("learning_rate", "clip_norm", "sigma_o", "block_length"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0 or self.local_sigma < 0 or self.global_sigma < 0:
            raise ValueError("weight_decay and noise sigmas must be nonnegative")
        self.cnn_widths = tuple(int(w) for w in self.cnn_widths)
        self.anneal_samples = tuple(int(n) for n in self.anneal_samples)

    @property
    def summary_dim(self) -> int:
        """Dimension of the instruction summary feeding the offset head."""
        if self.attention == "cnn":
            return self.cnn_filters * len(self.cnn_widths)
        return self.hidden_dim

    def feature_dim(self) -> int:
        return 12 if self.features == "full" else 3

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cnn_widths"] = list(self.cnn_widths)
        d["anneal_samples"] = list(self.anneal_samples)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(d)
        for key in ("cnn_widths", "anneal_samples"):
            if key in kwargs:
                value = kwargs[key]
                kwargs[key] = (value,) if isinstance(value, (int, float)) else tuple(value)
        return cls(**kwargs)
