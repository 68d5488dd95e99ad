from .config import FUSIONS, INTER_POOLINGS, MODALITIES, PRESETS, TEMPORALS, ModelConfig
from .network import SleepStager, attention_block, causal_windows, normalized_adjacency

__all__ = [
    "FUSIONS",
    "INTER_POOLINGS",
    "MODALITIES",
    "PRESETS",
    "TEMPORALS",
    "ModelConfig",
    "SleepStager",
    "attention_block",
    "causal_windows",
    "normalized_adjacency",
]
