from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

EPOCH_SECONDS = 30
CANONICAL_CHANNELS = ("EEG1", "EEG2", "EOG")


class StageLabel(enum.IntEnum):
    """Sleep stages in class-index order: W=0, N1=1, N2=2, N3=3, REM=4."""

    W = 0
    N1 = 1
    N2 = 2
    N3 = 3
    REM = 4

    @classmethod
    def parse(cls, value) -> "StageLabel":
        if isinstance(value, str):
            key = value.strip().upper()
            aliases = {"WAKE": "W", "R": "REM", "S1": "N1", "S2": "N2", "S3": "N3", "S4": "N3"}
            key = aliases.get(key, key)
            try:
                return cls[key]
            except KeyError:
                raise ValueError(f"unknown stage label {value!r}") from None
        return cls(int(value))


STAGE_NAMES = tuple(s.name for s in StageLabel)


@dataclass
class Recording:
    """A subject's multichannel signal; channel order is preserved."""

    subject_id: str
    channels: dict[str, np.ndarray]
    sample_rate_hz: int

    def __post_init__(self):
        if int(self.sample_rate_hz) != self.sample_rate_hz or self.sample_rate_hz <= 0:
            raise ValueError(f"sample_rate_hz must be a positive integer, got {self.sample_rate_hz}")
        self.sample_rate_hz = int(self.sample_rate_hz)
        self.channels = {str(k): np.asarray(v) for k, v in self.channels.items()}
        lengths = {k: v.shape for k, v in self.channels.items()}
        if any(len(s) != 1 for s in lengths.values()):
            raise ValueError(f"channels must be 1-D, got shapes {lengths}")
        if len({s[0] for s in lengths.values()}) > 1:
            raise ValueError(f"channel lengths differ: {lengths}")

    @property
    def channel_names(self) -> list[str]:
        return list(self.channels)

    @property
    def num_samples(self) -> int:
        return next(iter(self.channels.values())).shape[0] if self.channels else 0

    def as_array(self, names: Iterable[str] | None = None) -> np.ndarray:
        names = self.channel_names if names is None else list(names)
        return np.stack([self.channels[n] for n in names])


@dataclass
class Hypnogram:
    labels: np.ndarray
    epoch_seconds: int = field(default=EPOCH_SECONDS)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1:
            raise ValueError("labels must be 1-D")
        if labels.size and (labels.min() < 0 or labels.max() >= len(StageLabel)):
            raise ValueError(f"labels must lie in 0..{len(StageLabel) - 1}")
        self.labels = labels.astype(np.uint8)
        if self.epoch_seconds != EPOCH_SECONDS:
            raise ValueError(f"epoch_seconds is fixed at {EPOCH_SECONDS}")

    def __len__(self) -> int:
        return int(self.labels.size)

    def names(self) -> list[str]:
        return [STAGE_NAMES[i] for i in self.labels]

    def check_against(self, recording: Recording) -> None:
        expected = len(self) * self.epoch_seconds * recording.sample_rate_hz
        if recording.num_samples != expected:
            raise ValueError(
                f"{recording.subject_id}: {len(self)} epochs need {expected} samples, recording has {recording.num_samples}"
            )


DEFAULT_CHANNEL_PATTERNS: dict[str, tuple[str, ...]] = {
    "EEG1": ("EEG1", "EEG Fpz-Cz", "Fpz-Cz", "C3-A2", "C3-M2", "F3-A2", "F3-M2"),
    "EEG2": ("EEG2", "EEG Pz-Oz", "Pz-Oz", "C4-A1", "C4-M1", "O1-A2", "O1-M2"),
    "EOG": ("EOG", "EOG horizontal", "ROC-A1", "E2-M1", "LOC-A2", "E1-M2"),
}


def _norm(name: str) -> str:
    return "".join(name.lower().split())


def select_channels(recording: Recording, patterns: Mapping[str, Iterable[str]] | None = None) -> Recording:
    """Pick and rename the modeling channels by name match.

    For each target, patterns are tried in order; an exact (case and
    whitespace insensitive) match wins over a substring match.
    """
    patterns = DEFAULT_CHANNEL_PATTERNS if patterns is None else patterns
    available = recording.channel_names
    picked = {}
    for target, pats in patterns.items():
        found = None
        for pat in pats:
            p = _norm(pat)
            exact = [c for c in available if _norm(c) == p]
            if exact:
                found = exact[0]
                break
        if found is None:
            for pat in pats:
                sub = [c for c in available if _norm(pat) in _norm(c)]
                if sub:
                    found = sub[0]
                    break
        if found is None:
            raise ValueError(f"{recording.subject_id}: no channel matches {target} (tried {list(pats)}; have {available})")
        picked[target] = recording.channels[found]
    return Recording(recording.subject_id, picked, recording.sample_rate_hz)
