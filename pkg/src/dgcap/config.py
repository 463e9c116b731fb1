from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ContractError

GRAPH_MODES = ("dual", "gat", "forg")
FUSION_MODES = ("gate", "concat")


@dataclass
class ModelConfig:
    """Every dimension and hyperparameter of the captioner.

    Defaults follow the full-size MSVD setting; tests and the synthetic
    pipeline use much smaller values.
    """

    frames: int = 26
    objects_per_frame: int = 36
    appearance_dim: int = 1536
    motion_dim: int = 1024
    object_dim: int = 2048
    feature_dim: int = 1024          # D_v' : BiLSTM projection, GAT and FORG width
    encoder_hidden: int = 512        # per-direction BiLSTM hidden size
    correlation_dim: int | None = None   # psi/phi width, defaults to feature_dim
    attention_dim: int | None = None     # d_k, defaults to feature_dim
    fusion_dim: int | None = None        # gate output width, defaults to attention_dim
    hidden_size: int = 1024          # attention and language LSTM size
    embed_dim: int = 300
    mlp_hidden: int | None = None    # defaults to hidden_size
    vocab_size: int = 7351
    min_count: int = 2
    max_len: int = 26
    learning_rate: float = 0.0008
    batch_size: int = 128
    beam_size: int = 5
    epochs: int = 50
    grad_clip: float | None = None
    seed: int = 0
    forg_raw_sum: bool = False
    graphs: str = "dual"
    fusion: str = "gate"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.correlation_dim is None:
            self.correlation_dim = self.feature_dim
        if self.attention_dim is None:
            self.attention_dim = self.feature_dim
        if self.fusion_dim is None:
            self.fusion_dim = self.attention_dim
        if self.mlp_hidden is None:
            self.mlp_hidden = self.hidden_size
        self.validate()

    def validate(self) -> None:
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name in ("seed", "grad_clip", "extra", "graphs", "fusion", "forg_raw_sum"):
                continue
            if f.name == "learning_rate":
                if v < 0:
                    raise ContractError("learning_rate must be >= 0")
                continue
            if not isinstance(v, (int, float)) or v <= 0:
                raise ContractError(f"config field {f.name} must be positive, got {v!r}")
        if self.graphs not in GRAPH_MODES:
            raise ContractError(f"graphs must be one of {GRAPH_MODES}, got {self.graphs!r}")
        if self.fusion not in FUSION_MODES:
            raise ContractError(f"fusion must be one of {FUSION_MODES}, got {self.fusion!r}")
        if self.feature_dim < 2 or self.fusion_dim < 2:
            raise ContractError("feature_dim and fusion_dim must be >= 2 (layer norm)")

    # shape-defining fields must agree between a config and a checkpoint
    ARCH_FIELDS = (
        "frames", "objects_per_frame", "appearance_dim", "motion_dim", "object_dim",
        "feature_dim", "encoder_hidden", "correlation_dim", "attention_dim", "fusion_dim",
        "hidden_size", "embed_dim", "mlp_hidden", "vocab_size", "graphs", "fusion",
    )

    def arch(self) -> dict:
        return {k: getattr(self, k) for k in self.ARCH_FIELDS}

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "ModelConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)


def tiny_config(**overrides) -> ModelConfig:
    """The small configuration used by gradient checks and tests."""
    base = dict(
        frames=4, objects_per_frame=2, appearance_dim=8, motion_dim=8, object_dim=8,
        feature_dim=8, encoder_hidden=8, hidden_size=8, embed_dim=8, vocab_size=12,
        max_len=26, learning_rate=0.01, batch_size=8, beam_size=5, epochs=10,
    )
    base.update(overrides)
    return ModelConfig(**base)
