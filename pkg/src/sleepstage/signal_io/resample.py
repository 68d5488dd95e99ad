from __future__ import annotations

import logging

import numpy as np

from ..preprocess import FilterSpec, design_bandpass, filtfilt

log = logging.getLogger(__name__)


def default_antialias() -> FilterSpec:
    """The 0.5-49.9 Hz band-pass designed at 200 Hz; it also serves as anti-alias filter."""
    return design_bandpass(0.5, 49.9, 200.0, 5)


def resample_half(x, fs_hz: float, antialias: FilterSpec | None = None) -> np.ndarray:
    """Filter at 200 Hz with ``antialias`` (zero-phase), then keep every second sample.

    Odd-length input loses its final sample before filtering so the output is
    exactly half as long as what remains.
    """
    if fs_hz != 200:
        raise ValueError(f"resample_half expects 200 Hz input, got {fs_hz} Hz")
    antialias = default_antialias() if antialias is None else antialias
    if antialias.fs_hz != 200:
        raise ValueError(f"anti-alias filter was designed for {antialias.fs_hz} Hz, not 200 Hz")
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] % 2:
        log.info("odd input length %d: dropping the last sample", x.shape[-1])
        x = x[..., :-1]
    return np.ascontiguousarray(filtfilt(antialias, x)[..., ::2])
