"""Split 30 s epochs into overlapping 3 s subwindows ("tokens").

Token ``j`` of an epoch covers samples ``[225 j, 225 j + 300)``; thirteen
tokens tile the 3000-sample epoch with 75-sample overlaps and the last one
ends exactly on the epoch boundary.

:func:`tokenize_recording` emits batches modality-major, epoch-minor: all
epochs of the first modality in order, then the next modality.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .preprocess import EPOCH_SAMPLES, SAMPLE_RATE_HZ

TOKEN_SAMPLES = 300
TOKEN_STRIDE = 225
NUM_TOKENS = 13


@dataclass(frozen=True)
class TokenBatch:
    tokens: np.ndarray  # (num_tokens, token_samples)
    source_epoch_index: int
    modality: str


def num_tokens(window_s: float = 3.0, stride_s: float = 2.25, epoch_s: float = 30.0, fs_hz: int = SAMPLE_RATE_HZ) -> int:
    """Token count for a window/stride choice in seconds."""
    w = int(round(window_s * fs_hz))
    s = int(round(stride_s * fs_hz))
    n = int(round(epoch_s * fs_hz))
    if w <= 0 or s <= 0 or w > n:
        raise ValueError(f"invalid window {w} / stride {s} for an epoch of {n} samples")
    return (n - w) // s + 1


def token_offsets(count: int = NUM_TOKENS, stride: int = TOKEN_STRIDE) -> np.ndarray:
    return np.arange(count) * stride


def tokenize_array(epochs: np.ndarray, window: int = TOKEN_SAMPLES, stride: int = TOKEN_STRIDE) -> np.ndarray:
    """(..., n) epochs -> (..., count, window) strided copies, no rescaling."""
    epochs = np.asarray(epochs)
    n = epochs.shape[-1]
    count = (n - window) // stride + 1
    view = np.lib.stride_tricks.sliding_window_view(epochs, window, axis=-1)
    return np.ascontiguousarray(view[..., ::stride, :][..., :count, :])


def tokenize_epoch(epoch, source_epoch_index: int = 0, modality: str = "EEG1") -> TokenBatch:
    epoch = np.asarray(epoch)
    if epoch.shape != (EPOCH_SAMPLES,):
        raise ValueError(f"epoch must have exactly {EPOCH_SAMPLES} samples, got shape {epoch.shape}")
    return TokenBatch(tokenize_array(epoch), int(source_epoch_index), modality)


def tokenize_recording(epochs: Mapping[str, np.ndarray]) -> list[TokenBatch]:
    """Map :func:`tokenize_epoch` over every (modality, epoch) pair."""
    out = []
    for modality, arr in epochs.items():
        arr = np.asarray(arr)
        if arr.size == 0:
            continue
        if arr.ndim != 2:
            raise ValueError(f"{modality}: expected (num_epochs, {EPOCH_SAMPLES}), got {arr.shape}")
        out.extend(tokenize_epoch(e, i, modality) for i, e in enumerate(arr))
    return out


def stitch(tokens: np.ndarray, stride: int = TOKEN_STRIDE) -> np.ndarray:
    """Inverse of tokenization: keep each token's first ``stride`` samples, the last one whole."""
    tokens = np.asarray(tokens)
    parts = [t[:stride] for t in tokens[:-1]] + [tokens[-1]]
    return np.concatenate(parts)
