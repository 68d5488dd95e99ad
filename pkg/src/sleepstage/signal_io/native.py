"""Native on-disk dataset: one directory per subject.

::

    <root>/<subject_id>/header.json   {"format", "subject_id", "sample_rate_hz",
                                       "channel_names", "num_epochs", "filtered"}
    <root>/<subject_id>/<channel>.f32 little-endian float32 samples, microvolts
    <root>/<subject_id>/labels.u8     one byte per 30 s epoch, StageLabel index

Subject directories are discovered by the presence of ``header.json`` and
returned sorted by name.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .types import EPOCH_SECONDS, Hypnogram, Recording

FORMAT = "sleepstage-native/1"
HEADER = "header.json"
LABELS = "labels.u8"


@dataclass
class Subject:
    recording: Recording
    hypnogram: Hypnogram
    filtered: bool = False

    @property
    def subject_id(self) -> str:
        return self.recording.subject_id


def _check_name(name: str) -> None:
    if not name or "/" in name or "\\" in name or name in (".", ".."):
        raise ValueError(f"unusable file name component {name!r}")


def write_subject(root: str | Path, subject: Subject) -> Path:
    rec, hyp = subject.recording, subject.hypnogram
    hyp.check_against(rec)
    _check_name(rec.subject_id)
    d = Path(root) / rec.subject_id
    d.mkdir(parents=True, exist_ok=True)
    for name, x in rec.channels.items():
        _check_name(name)
        (d / f"{name}.f32").write_bytes(np.asarray(x, dtype="<f4").tobytes())
    (d / LABELS).write_bytes(hyp.labels.astype(np.uint8).tobytes())
    header = {
        "format": FORMAT,
        "subject_id": rec.subject_id,
        "sample_rate_hz": rec.sample_rate_hz,
        "channel_names": rec.channel_names,
        "num_epochs": len(hyp),
        "epoch_seconds": EPOCH_SECONDS,
        "filtered": bool(subject.filtered),
    }
    (d / HEADER).write_text(json.dumps(header, indent=2) + "\n")
    return d


def read_subject(directory: str | Path) -> Subject:
    d = Path(directory)
    header = json.loads((d / HEADER).read_text())
    if header.get("format") != FORMAT:
        raise ValueError(f"{d / HEADER}: unsupported format {header.get('format')!r}")
    fs = int(header["sample_rate_hz"])
    n_epochs = int(header["num_epochs"])
    expected = n_epochs * EPOCH_SECONDS * fs
    channels = {}
    for name in header["channel_names"]:
        x = np.fromfile(d / f"{name}.f32", dtype="<f4")
        if x.size != expected:
            raise ValueError(f"{d / (name + '.f32')}: {x.size} samples, header implies {expected}")
        channels[name] = x.astype(np.float32)
    labels = np.fromfile(d / LABELS, dtype=np.uint8)
    if labels.size != n_epochs:
        raise ValueError(f"{d / LABELS}: {labels.size} labels, header says {n_epochs}")
    rec = Recording(header["subject_id"], channels, fs)
    return Subject(rec, Hypnogram(labels), bool(header.get("filtered", False)))


def subject_dirs(root: str | Path) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    return sorted(p for p in root.iterdir() if (p / HEADER).is_file())


def write_dataset(root: str | Path, subjects) -> list[Path]:
    return [write_subject(root, s) for s in subjects]


def read_dataset(root: str | Path) -> list[Subject]:
    dirs = subject_dirs(root)
    if not dirs:
        raise FileNotFoundError(f"no subject directories (with {HEADER}) under {root}")
    return [read_subject(d) for d in dirs]
