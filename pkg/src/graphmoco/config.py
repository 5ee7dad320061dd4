"""Training and encoder hyperparameter bundle, serializable into checkpoints."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

from .normalizer import DEFAULT_ADDRESS_PATTERN


@dataclass
class TrainConfig:
    # contrastive objective
    tau: float = 0.07
    momentum: float = 0.999
    queue_size: int = 5120
    batch_size: int = 128
    learning_rate: float = 0.01
    weight_decay: float = 1e-4
    epochs: int = 100
    optimizer: str = "adam"
    seed: int = 0
    preshuffle: bool = True
    loss: str = "infonce"
    triplet_margin: float = 0.5
    mask_same_function: bool = False
    allow_self_pairs: bool = False
    grad_clip: float = 5.0
    # encoder architecture
    d: int = 64
    filters_per_size: int = 64
    windows: tuple[int, ...] = (2, 3, 4)
    layers: int = 3
    hidden_dim: int = 256
    out_dim: int = 256
    activation: str = "tanh"
    two_tuple_enabled: bool = True
    two_tuple_node_cap: int = 30
    directed_aggregation: bool = False
    address_pattern: Optional[str] = DEFAULT_ADDRESS_PATTERN
    # bookkeeping
    dedup: bool = False
    checkpoint_every: int = 1

    def __post_init__(self) -> None:
        self.windows = tuple(self.windows)
        self.validate()

    def validate(self) -> None:
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.tau <= 0:
            raise ValueError("temperature must be positive")
        if self.batch_size < 1 or self.queue_size < 1:
            raise ValueError("batch and queue sizes must be >= 1")
        if self.queue_size % self.batch_size != 0:
            raise ValueError(
                f"queue size {self.queue_size} must be a multiple of batch size {self.batch_size}"
            )
        if self.loss not in ("infonce", "triplet"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.optimizer not in ("adam",):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["windows"] = list(self.windows)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        if "windows" in doc:
            doc["windows"] = tuple(doc["windows"])
        return cls(**doc)
