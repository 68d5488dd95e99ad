from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

MODALITIES = ("EEG1", "EEG2", "EOG")
FUSIONS = ("gcn", "concat")
TEMPORALS = ("full", "cnn_only")
INTER_POOLINGS = ("mean", "last")


@dataclass(frozen=True)
class ModelConfig:
    """Network hyperparameters.

    Defaults are the full-size network (64-d CNN tokens, 128-d transformers,
    7-epoch context). :meth:`desk` returns the reduced configuration used for
    single-core experiments.
    """

    d_cnn: int = 64
    d_tr: int = 128
    num_heads: int = 4
    d_ff: int = 256
    transformer_layers: int = 2
    context_window: int = 7
    dropout: float = 0.1
    fusion: str = "gcn"
    temporal: str = "full"
    modalities: tuple[str, ...] = MODALITIES
    cnn_branch_channels: int = 16
    num_classes: int = 5
    kernel_sizes: tuple[int, ...] = (16, 32, 64, 128)
    trunk_kernel: int = 8
    pool_size: int = 4
    num_tokens: int = 13
    token_samples: int = 300
    inter_pooling: str = "mean"
    share_encoders: bool = False

    def __post_init__(self):
        object.__setattr__(self, "modalities", tuple(self.modalities))
        object.__setattr__(self, "kernel_sizes", tuple(self.kernel_sizes))
        if self.d_tr % self.num_heads:
            raise ValueError(f"d_tr={self.d_tr} is not divisible by num_heads={self.num_heads}")
        if self.context_window < 1:
            raise ValueError(f"context_window must be >= 1, got {self.context_window}")
        if not self.modalities:
            raise ValueError("at least one modality is required")
        unknown = [m for m in self.modalities if m not in MODALITIES]
        if unknown:
            raise ValueError(f"unknown modalities {unknown}; choose from {MODALITIES}")
        if len(set(self.modalities)) != len(self.modalities):
            raise ValueError(f"duplicate modalities in {self.modalities}")
        # canonical order keeps concat fusion layout stable
        object.__setattr__(self, "modalities", tuple(m for m in MODALITIES if m in self.modalities))
        if self.fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.temporal not in TEMPORALS:
            raise ValueError(f"temporal must be one of {TEMPORALS}, got {self.temporal!r}")
        if self.inter_pooling not in INTER_POOLINGS:
            raise ValueError(f"inter_pooling must be one of {INTER_POOLINGS}, got {self.inter_pooling!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.token_samples < self.pool_size:
            raise ValueError("token_samples shorter than the max-pool window")

    @classmethod
    def desk(cls, **overrides) -> "ModelConfig":
        """Reduced widths for single-core CPU training; same topology and kernels.

        The window is read at its last position: with zero-initialized
        positional tables a mean over the window starts out symmetric in the
        epochs, and the short step schedule leaves too little time to learn
        which one is the target.
        """
        base = dict(d_cnn=8, d_tr=32, num_heads=4, d_ff=64, cnn_branch_channels=2, dropout=0.1, inter_pooling="last")
        base.update(overrides)
        return cls(**base)

    def replace(self, **changes) -> "ModelConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["modalities"] = list(self.modalities)
        d["kernel_sizes"] = list(self.kernel_sizes)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown model config keys: {sorted(extra)}")
        return cls(**data)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ModelConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


PRESETS = {
    "standard": ModelConfig,
    "desk": ModelConfig.desk,
}
