"""Synthetic labeled polysomnography.

Stages follow a first-order Markov chain. Each epoch is pink background
noise plus stage-specific activity:

====  ===================================================================
W     9-11 Hz alpha on EEG, blink deflections on EOG
N1    attenuated alpha with 5-7 Hz theta, slow rolling eye movements
N2    11-16 Hz spindles (0.5-2 s) and biphasic K-complexes on EEG
N3    high-amplitude 0.8-2 Hz delta bursts
REM   low-amplitude sawtooth EEG, rapid sawtooth-like deflections on EOG
====  ===================================================================

In context-coupled mode an epoch whose stage repeats the previous epoch's
stage is, with probability ``quiet_prob``, rendered as background only.
Such an epoch carries no information about its own label, which is then
recoverable only from the preceding epochs.

Amplitudes and event rates are calibration knobs, not physiology.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sp_signal

from .native import Subject
from .types import EPOCH_SECONDS, Hypnogram, Recording, StageLabel

DEFAULT_TRANSITIONS = (
    (0.88, 0.08, 0.02, 0.00, 0.02),
    (0.06, 0.70, 0.20, 0.00, 0.04),
    (0.01, 0.03, 0.88, 0.05, 0.03),
    (0.01, 0.00, 0.08, 0.91, 0.00),
    (0.02, 0.04, 0.03, 0.00, 0.91),
)

# expected events per 30 s epoch of the matching stage
DEFAULT_EVENT_RATES = {
    "spindle": 4.0,
    "kcomplex": 2.0,
    "delta": 7.0,
    "rem": 5.0,
    "blink": 4.0,
    "sem": 2.0,
}

ALPHA_UV = 25.0
THETA_UV = 20.0
SAWTOOTH_UV = 12.0
SPINDLE_UV = 35.0
KCOMPLEX_UV = 90.0
DELTA_UV = 75.0
BLINK_UV = 150.0
SEM_UV = 70.0
REM_EOG_UV = 80.0
EEG2_GAIN = 0.8
EOG_EEG_LEAK = 0.2
FRONTAL_BLINK_LEAK = 0.3


@dataclass
class SynthConfig:
    seed: int = 0
    num_subjects: int = 20
    epochs_per_subject: int = 200
    transition_matrix: tuple = DEFAULT_TRANSITIONS
    event_rates: dict = field(default_factory=lambda: dict(DEFAULT_EVENT_RATES))
    noise_std: float = 10.0
    context_coupled: bool = False
    quiet_prob: float = 0.4
    start_stage: str = "W"
    sample_rate_hz: int = 100
    subject_gain_range: tuple = (0.8, 1.2)

    def __post_init__(self):
        tm = np.asarray(self.transition_matrix, dtype=float)
        n = len(StageLabel)
        if tm.shape != (n, n):
            raise ValueError(f"transition_matrix must be {n}x{n}, got {tm.shape}")
        if np.any(tm < 0) or np.any(np.abs(tm.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("transition_matrix rows must be nonnegative and sum to 1 (within 1e-9)")
        self.transition_matrix = tuple(tuple(float(v) for v in row) for row in tm)
        unknown = set(self.event_rates) - set(DEFAULT_EVENT_RATES)
        if unknown:
            raise ValueError(f"unknown event rate keys {sorted(unknown)}")
        rates = dict(DEFAULT_EVENT_RATES)
        rates.update({k: float(v) for k, v in self.event_rates.items()})
        if any(v < 0 for v in rates.values()):
            raise ValueError(f"event rates must be nonnegative, got {rates}")
        self.event_rates = rates
        if self.epochs_per_subject < 7:
            raise ValueError(f"epochs_per_subject must be >= 7 (one full context window), got {self.epochs_per_subject}")
        if self.num_subjects < 1:
            raise ValueError("num_subjects must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        if not 0.0 <= self.quiet_prob <= 1.0:
            raise ValueError("quiet_prob must lie in [0, 1]")
        StageLabel.parse(self.start_stage)
        lo, hi = self.subject_gain_range
        if not 0 < lo <= hi:
            raise ValueError(f"bad subject_gain_range {self.subject_gain_range}")
        self.subject_gain_range = (float(lo), float(hi))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["transition_matrix"] = [list(r) for r in self.transition_matrix]
        d["subject_gain_range"] = list(self.subject_gain_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        return cls(**d)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def stationary_distribution(transition_matrix) -> np.ndarray:
    tm = np.asarray(transition_matrix, dtype=float)
    w, v = np.linalg.eig(tm.T)
    k = int(np.argmin(np.abs(w - 1.0)))
    p = np.real(v[:, k])
    return p / p.sum()


def markov_chain(transition_matrix, length: int, start: int, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(np.asarray(transition_matrix, dtype=float), axis=1)
    u = rng.random(length)
    out = np.empty(length, dtype=np.uint8)
    state = int(start)
    out[0] = state
    for i in range(1, length):
        state = min(int(np.searchsorted(cdf[state], u[i], side="right")), cdf.shape[0] - 1)
        out[i] = state
    return out


def pink_noise(n: int, std: float, rng: np.random.Generator, fs: float) -> np.ndarray:
    """1/f power spectrum above 0.5 Hz, flat below; scaled to ``std``."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / fs)
    spec /= np.sqrt(np.maximum(f, 0.5))
    x = np.fft.irfft(spec, n)
    s = x.std()
    return x * (std / s) if s > 0 else x


def _place(dst: np.ndarray, start: int, wave: np.ndarray) -> None:
    stop = min(start + wave.size, dst.size)
    dst[start:stop] += wave[: stop - start]


def _events(rng, rate, fs, n, durations, make):
    """Add Poisson(rate) events at uniform onsets; ``make(t, rng)`` builds each waveform."""
    out = np.zeros(n)
    for _ in range(rng.poisson(rate)):
        dur = rng.uniform(*durations)
        t = np.arange(int(dur * fs)) / fs
        _place(out, int(rng.integers(0, n)), make(t, rng))
    return out


def _spindle(t, rng):
    f = rng.uniform(11.0, 16.0)
    return SPINDLE_UV * np.sin(2 * np.pi * f * t) * np.hanning(t.size)


def _kcomplex(t, rng):
    u = t / t[-1] if t.size > 1 else t
    return -KCOMPLEX_UV * rng.uniform(0.8, 1.2) * np.sin(2 * np.pi * u) * np.sin(np.pi * u)


def _delta(t, rng):
    f = rng.uniform(0.8, 2.0)
    return DELTA_UV * rng.uniform(0.8, 1.2) * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi)) * sp_signal.windows.tukey(t.size, 0.3)


def _rem_burst(t, rng):
    f = rng.uniform(1.0, 3.0)
    sign = rng.choice([-1.0, 1.0])
    return sign * REM_EOG_UV * sp_signal.sawtooth(2 * np.pi * f * t, width=0.15) * sp_signal.windows.tukey(t.size, 0.2)


def _blink(t, rng):
    return BLINK_UV * rng.uniform(0.7, 1.3) * np.hanning(t.size)


def _sem(t, rng):
    return rng.choice([-1.0, 1.0]) * SEM_UV * np.sin(np.pi * t / t[-1] if t.size > 1 else t)


def _rhythm(rng, n, fs, f_lo, f_hi, amp):
    t = np.arange(n) / fs
    f = rng.uniform(f_lo, f_hi)
    envelope = 1.0 + 0.3 * np.sin(2 * np.pi * rng.uniform(0.05, 0.2) * t + rng.uniform(0, 2 * np.pi))
    return amp * envelope * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))


def _sawtooth_rhythm(rng, n, fs, amp):
    t = np.arange(n) / fs
    return amp * sp_signal.sawtooth(2 * np.pi * rng.uniform(2.0, 5.0) * t + rng.uniform(0, 2 * np.pi), width=0.3)


def render_epoch(stage: int, rng: np.random.Generator, rates: dict, fs: int) -> tuple[np.ndarray, np.ndarray]:
    """Stage activity for one epoch: (EEG component, EOG component)."""
    n = EPOCH_SECONDS * fs
    eeg = np.zeros(n)
    eog = np.zeros(n)
    if stage == StageLabel.W:
        eeg += _rhythm(rng, n, fs, 9.0, 11.0, ALPHA_UV)
        eog += _events(rng, rates["blink"], fs, n, (0.2, 0.4), _blink)
    elif stage == StageLabel.N1:
        eeg += _rhythm(rng, n, fs, 9.0, 11.0, 0.3 * ALPHA_UV)
        eeg += _rhythm(rng, n, fs, 5.0, 7.0, THETA_UV)
        eog += _events(rng, rates["sem"], fs, n, (1.5, 3.0), _sem)
    elif stage == StageLabel.N2:
        eeg += _events(rng, rates["spindle"], fs, n, (0.5, 2.0), _spindle)
        eeg += _events(rng, rates["kcomplex"], fs, n, (0.5, 1.0), _kcomplex)
    elif stage == StageLabel.N3:
        eeg += _events(rng, rates["delta"], fs, n, (2.0, 5.0), _delta)
    elif stage == StageLabel.REM:
        eeg += _sawtooth_rhythm(rng, n, fs, SAWTOOTH_UV)
        eog += _events(rng, rates["rem"], fs, n, (0.3, 2.0), _rem_burst)
    return eeg, eog


def synth_subject(config: SynthConfig, index: int, rng: np.random.Generator) -> tuple[Subject, np.ndarray]:
    """One subject plus its per-epoch quiet mask."""
    fs = config.sample_rate_hz
    e = config.epochs_per_subject
    n = EPOCH_SECONDS * fs
    labels = markov_chain(config.transition_matrix, e, int(StageLabel.parse(config.start_stage)), rng)
    quiet = np.zeros(e, dtype=bool)
    if config.context_coupled:
        draws = rng.random(e)
        quiet[1:] = (labels[1:] == labels[:-1]) & (draws[1:] < config.quiet_prob)

    gain = rng.uniform(*config.subject_gain_range)
    eeg1 = pink_noise(e * n, config.noise_std, rng, fs)
    eeg2 = pink_noise(e * n, config.noise_std, rng, fs)
    eog = pink_noise(e * n, config.noise_std, rng, fs)
    for i, stage in enumerate(labels):
        if quiet[i]:
            continue
        a, b = render_epoch(int(stage), rng, config.event_rates, fs)
        sl = slice(i * n, (i + 1) * n)
        eeg1[sl] += a + FRONTAL_BLINK_LEAK * b * (stage == StageLabel.W)
        eeg2[sl] += EEG2_GAIN * a
        eog[sl] += b + EOG_EEG_LEAK * a
    channels = {name: (gain * x).astype(np.float32) for name, x in (("EEG1", eeg1), ("EEG2", eeg2), ("EOG", eog))}
    rec = Recording(f"S{index:03d}", channels, fs)
    return Subject(rec, Hypnogram(labels), filtered=False), quiet


def synth_dataset(config: SynthConfig, return_quiet: bool = False):
    """Deterministic list of subjects; each subject draws from its own spawned stream."""
    streams = np.random.SeedSequence(config.seed).spawn(config.num_subjects)
    out = []
    masks = []
    for i, ss in enumerate(streams):
        subject, quiet = synth_subject(config, i, np.random.default_rng(ss))
        out.append(subject)
        masks.append(quiet)
    return (out, masks) if return_quiet else out
