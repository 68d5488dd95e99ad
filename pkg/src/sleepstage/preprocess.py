"""Butterworth band-pass design as second-order sections, zero-phase filtering,
and 30 s epoching."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import signal as sp_signal

log = logging.getLogger(__name__)

EPOCH_SECONDS = 30
SAMPLE_RATE_HZ = 100
EPOCH_SAMPLES = EPOCH_SECONDS * SAMPLE_RATE_HZ


@dataclass(frozen=True)
class FilterSpec:
    """Cascade of biquads; row i of ``sos`` is (b0, b1, b2, 1, a1, a2)."""

    sos: np.ndarray
    order: int
    band: tuple[float, float]
    fs_hz: float
    kind: str = "bandpass"

    @property
    def num_sections(self) -> int:
        return self.sos.shape[0]

    @property
    def total_order(self) -> int:
        """Order of the composite digital filter (2 per section)."""
        return 2 * self.num_sections

    def poles(self) -> np.ndarray:
        return np.concatenate([np.roots(row[3:]) for row in self.sos])

    def is_stable(self) -> bool:
        return bool(np.all(np.abs(self.poles()) < 1.0))

    def response(self, freqs_hz) -> np.ndarray:
        """Complex frequency response evaluated directly from the sections."""
        z = np.exp(1j * 2 * np.pi * np.asarray(freqs_hz, dtype=float) / self.fs_hz)
        h = np.ones_like(z)
        for b0, b1, b2, a0, a1, a2 in self.sos:
            h = h * (b0 + b1 / z + b2 / z**2) / (a0 + a1 / z + a2 / z**2)
        return h


def _butter_prototype(order: int) -> np.ndarray:
    k = np.arange(order)
    return np.exp(1j * np.pi * (2 * k + order + 1) / (2 * order))


def _bilinear_zpk(zeros, poles, gain, fs):
    fs2 = 2.0 * fs
    degree = len(poles) - len(zeros)
    zd = (fs2 + zeros) / (fs2 - zeros)
    pd = (fs2 + poles) / (fs2 - poles)
    zd = np.concatenate([zd, -np.ones(degree)])
    kd = gain * np.real(np.prod(fs2 - zeros) / np.prod(fs2 - poles))
    return zd, pd, kd


def _pair_roots(roots: np.ndarray, tol: float = 1e-9) -> list[tuple[complex, complex]]:
    """Group roots into conjugate pairs; leftover real roots are paired together."""
    roots = list(roots)
    complex_upper = sorted((r for r in roots if r.imag > tol), key=lambda r: abs(r))
    reals = sorted((r.real for r in roots if abs(r.imag) <= tol))
    pairs = [(r, np.conj(r)) for r in complex_upper]
    lower = [r for r in roots if r.imag < -tol]
    if len(lower) != len(complex_upper):
        raise ValueError("roots are not closed under conjugation")
    for i in range(0, len(reals) - 1, 2):
        pairs.append((reals[i], reals[i + 1]))
    if len(reals) % 2:
        pairs.append((reals[-1], 0.0))
    return pairs


def _zpk_to_sos(zeros, poles, gain) -> np.ndarray:
    pole_pairs = _pair_roots(np.asarray(poles))
    zero_pairs = _pair_roots(np.asarray(zeros))
    while len(zero_pairs) < len(pole_pairs):
        zero_pairs.append((0.0, 0.0))
    # each pole pair takes the nearest remaining zeros, starting from the
    # pole closest to the unit circle, so no section has a large gain on its own
    pole_pairs.sort(key=lambda pr: -max(abs(pr[0]), abs(pr[1])))
    sections = []
    for p1, p2 in pole_pairs:
        best = min(range(len(zero_pairs)), key=lambda j: abs(zero_pairs[j][0] - p1) + abs(zero_pairs[j][1] - p1))
        sections.append(((p1, p2), zero_pairs.pop(best)))
    sections.reverse()
    sos = np.zeros((len(sections), 6))
    for i, ((p1, p2), (z1, z2)) in enumerate(sections):
        sos[i, :3] = np.real([1.0, -(z1 + z2), z1 * z2])
        sos[i, 3:] = np.real([1.0, -(p1 + p2), p1 * p2])
    sos[0, :3] *= gain
    return sos


def design_bandpass(low_hz: float, high_hz: float, fs_hz: float, order: int = 5) -> FilterSpec:
    """Digital Butterworth band-pass via bilinear transform with pre-warped edges.

    An order-N band-pass has 2N poles and is returned as N biquads.
    """
    nyquist = fs_hz / 2.0
    if not 0.0 < low_hz < high_hz:
        raise ValueError(f"need 0 < low < high, got low={low_hz}, high={high_hz}")
    if high_hz >= nyquist:
        raise ValueError(f"upper edge {high_hz} Hz must be below Nyquist ({nyquist} Hz)")
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")

    w_low = 2.0 * fs_hz * np.tan(np.pi * low_hz / fs_hz)
    w_high = 2.0 * fs_hz * np.tan(np.pi * high_hz / fs_hz)
    bw = w_high - w_low
    w0 = np.sqrt(w_low * w_high)

    proto = _butter_prototype(order)
    scaled = proto * bw / 2.0
    disc = np.sqrt(scaled**2 - w0**2 + 0j)
    poles = np.concatenate([scaled + disc, scaled - disc])
    zeros = np.zeros(order)
    gain = bw**order

    zd, pd, kd = _bilinear_zpk(zeros, poles, gain, fs_hz)
    sos = _zpk_to_sos(zd, pd, kd)
    return FilterSpec(sos=sos, order=order, band=(float(low_hz), float(high_hz)), fs_hz=float(fs_hz))


def design_lowpass(cutoff_hz: float, fs_hz: float, order: int = 5) -> FilterSpec:
    """Digital Butterworth low-pass; used as a plain anti-alias filter."""
    if not 0.0 < cutoff_hz < fs_hz / 2.0:
        raise ValueError(f"cutoff {cutoff_hz} Hz must lie in (0, {fs_hz / 2.0})")
    wc = 2.0 * fs_hz * np.tan(np.pi * cutoff_hz / fs_hz)
    poles = _butter_prototype(order) * wc
    zd, pd, kd = _bilinear_zpk(np.zeros(0), poles, wc**order, fs_hz)
    sos = _zpk_to_sos(zd, pd, kd)
    return FilterSpec(sos=sos, order=order, band=(0.0, float(cutoff_hz)), fs_hz=float(fs_hz), kind="lowpass")


def _forward_backward(sos: np.ndarray, x: np.ndarray, padlen: int) -> np.ndarray:
    """Forward then reverse pass over rows of a 2-D array."""
    # odd reflection about the end points
    left = 2.0 * x[:, :1] - x[:, padlen:0:-1]
    right = 2.0 * x[:, -1:] - x[:, -2 : -padlen - 2 : -1]
    ext = np.concatenate([left, x, right], axis=1)
    zi = sp_signal.sosfilt_zi(sos)[:, None, :]
    y, _ = sp_signal.sosfilt(sos, ext, axis=1, zi=zi * ext[None, :, :1])
    y = y[:, ::-1]
    y, _ = sp_signal.sosfilt(sos, y, axis=1, zi=zi * y[None, :, :1])
    return y[:, ::-1][:, padlen:-padlen]


def filtfilt(spec: FilterSpec, x) -> np.ndarray:
    """Zero-phase filtering along the last axis.

    Edges are extended by odd reflection of length 3 x total order; each pass
    starts from the steady-state section state for its first sample. The
    forward-backward and backward-forward results are averaged, which makes
    the operator commute exactly with time reversal.
    """
    x = np.asarray(x, dtype=np.float64)
    padlen = 3 * spec.total_order
    if x.shape[-1] <= padlen:
        raise ValueError(f"signal of length {x.shape[-1]} is too short; need more than {padlen} samples")
    rows = x.reshape(-1, x.shape[-1])
    fb = _forward_backward(spec.sos, rows, padlen)
    bf = _forward_backward(spec.sos, rows[:, ::-1], padlen)[:, ::-1]
    return (0.5 * (fb + bf)).reshape(x.shape)


def epoch_split(signal, epoch_samples: int = EPOCH_SAMPLES) -> np.ndarray:
    """Cut a 1-D signal into non-overlapping epochs; a trailing remainder is dropped."""
    signal = np.asarray(signal)
    n = signal.shape[-1] // epoch_samples
    dropped = signal.shape[-1] - n * epoch_samples
    if dropped:
        log.info("discarding %d trailing samples (partial epoch)", dropped)
    return signal[..., : n * epoch_samples].reshape(*signal.shape[:-1], n, epoch_samples)


def bandpass_record(channels: np.ndarray, fs_hz: float, low_hz: float = 0.5, high_hz: float = 49.9, order: int = 5) -> np.ndarray:
    """Apply the standard 0.5-49.9 Hz zero-phase band-pass to (channels, samples)."""
    spec = design_bandpass(low_hz, high_hz, fs_hz, order)
    return filtfilt(spec, channels)
