"""Mini-batch training over context windows and whole-record inference.

Batching: a batch of ``batch_size`` target epochs is assembled from
``runs_per_batch`` contiguous runs, usually from different recordings. Each
run is extended left by the context width so segment embeddings are
computed once per epoch and shared by all windows of that run. Run
boundaries are re-drawn with a random shift every training epoch and the
run order is shuffled.

Random streams: ``SeedSequence(seed, spawn_key=key)`` spawns three children
in fixed order for weight init, batch order and dropout. ``key`` identifies
the fold, so the same (seed, fold) always replays the same run.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..autodiff import AdamHyper, adam_step, load_checkpoint, no_grad, ops, save_checkpoint, step_lr
from ..model import ModelConfig, SleepStager, causal_windows
from ..preprocess import EPOCH_SAMPLES, SAMPLE_RATE_HZ, bandpass_record, epoch_split
from ..signal_io import Subject
from ..tokenizer import tokenize_array
from .metrics import MetricsReport, compute_metrics

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    batch_size: int = 32
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    lr_step: int = 5
    lr_gamma: float = 0.1
    runs_per_batch: int = 2
    val_fraction: float = 0.1
    class_weighting: bool = False
    eval_chunk: int = 128

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 1 <= self.runs_per_batch <= self.batch_size:
            raise ValueError("runs_per_batch must lie in [1, batch_size]")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")
        AdamHyper(self.learning_rate, self.weight_decay)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float | None] = field(default_factory=list)
    val_accuracy: list[float | None] = field(default_factory=list)
    learning_rate: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PreparedSubject:
    """Filtered, epoched and tokenized data for one subject."""

    subject_id: str
    tokens: dict[str, np.ndarray]  # modality -> (E, 13, 300) float32
    labels: np.ndarray

    @property
    def num_epochs(self) -> int:
        return int(self.labels.size)


def prepare_subject(subject: Subject, modalities: Sequence[str] | None = None) -> PreparedSubject:
    rec = subject.recording
    if rec.sample_rate_hz != SAMPLE_RATE_HZ:
        raise ValueError(f"{rec.subject_id}: sample rate {rec.sample_rate_hz} Hz; run preprocess to bring it to {SAMPLE_RATE_HZ} Hz")
    subject.hypnogram.check_against(rec)
    names = list(modalities) if modalities is not None else rec.channel_names
    missing = [m for m in names if m not in rec.channels]
    if missing:
        raise ValueError(f"{rec.subject_id}: missing channels {missing}")
    data = rec.as_array(names).astype(np.float64)
    if not subject.filtered:
        data = bandpass_record(data, SAMPLE_RATE_HZ)
    epochs = epoch_split(data, EPOCH_SAMPLES)
    tokens = {m: tokenize_array(epochs[i]).astype(np.float32) for i, m in enumerate(names)}
    return PreparedSubject(rec.subject_id, tokens, subject.hypnogram.labels.astype(np.intp))


def _streams(seed: int, key: tuple) -> tuple[np.random.Generator, ...]:
    children = np.random.SeedSequence(seed, spawn_key=tuple(key)).spawn(3)
    return tuple(np.random.default_rng(c) for c in children)


def _run(model: SleepStager, subject: PreparedSubject, start: int, stop: int):
    """Tokens and window indices for targets [start, stop)."""
    ctx = model.context_epochs
    run_start = max(0, start - ctx)
    targets = np.arange(start, stop)
    windows = causal_windows(targets, run_start, model.config.context_window, record_start=0 if ctx else run_start)
    tokens = {m: subject.tokens[m][run_start:stop] for m in model.config.modalities}
    return tokens, windows


def training_runs(subjects: Sequence[PreparedSubject], run_length: int, rng: np.random.Generator) -> list[tuple[int, int, int]]:
    """(subject index, start, stop) target runs covering every epoch once, in shuffled order."""
    runs = []
    for si, s in enumerate(subjects):
        shift = int(rng.integers(run_length))
        edges = [0] + [b for b in range(run_length - shift, s.num_epochs, run_length) if b > 0] + [s.num_epochs]
        runs.extend((si, a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a)
    order = rng.permutation(len(runs))
    return [runs[i] for i in order]


def merge_runs(model: SleepStager, pieces) -> tuple[dict[str, np.ndarray], np.ndarray, np.ndarray]:
    """Concatenate several (subject, start, stop) runs into one forward batch."""
    tokens: dict[str, list] = {m: [] for m in model.config.modalities}
    windows, labels = [], []
    offset = 0
    for s, a, b in pieces:
        t, w = _run(model, s, a, b)
        for m in tokens:
            tokens[m].append(t[m])
        windows.append(w + offset)
        labels.append(s.labels[a:b])
        offset += next(iter(t.values())).shape[0]
    return {m: np.concatenate(v) for m, v in tokens.items()}, np.concatenate(windows), np.concatenate(labels)


def class_weights(subjects: Sequence[PreparedSubject], num_classes: int) -> np.ndarray:
    counts = np.bincount(np.concatenate([s.labels for s in subjects]), minlength=num_classes).astype(np.float64)
    w = np.where(counts > 0, counts.sum() / (num_classes * np.maximum(counts, 1)), 0.0)
    return w


def predict_proba(model: SleepStager, subject: PreparedSubject, chunk: int = 128) -> np.ndarray:
    """(E, classes) probabilities for every epoch of a subject, eval mode."""
    out = []
    with no_grad():
        for a in range(0, subject.num_epochs, chunk):
            b = min(a + chunk, subject.num_epochs)
            tokens, windows = _run(model, subject, a, b)
            logits = model.forward_chunk(tokens, windows, training=False)
            out.append(ops.softmax(logits, axis=-1).data.astype(np.float64))
    return np.concatenate(out) if out else np.zeros((0, model.config.num_classes))


def evaluate(model: SleepStager, subjects: Sequence[PreparedSubject], chunk: int = 128) -> tuple[MetricsReport, dict[str, np.ndarray], float]:
    """Metrics over all epochs of ``subjects``, per-subject predictions, mean loss."""
    if not subjects:
        raise ValueError("cannot evaluate an empty split")
    preds = {}
    truth = []
    nll = 0.0
    for s in subjects:
        p = predict_proba(model, s, chunk)
        preds[s.subject_id] = p.argmax(axis=1)
        truth.append(s.labels)
        nll -= float(np.log(np.maximum(p[np.arange(s.num_epochs), s.labels], 1e-12)).sum())
    y = np.concatenate(truth)
    yhat = np.concatenate([preds[s.subject_id] for s in subjects])
    return compute_metrics(y, yhat, model.config.num_classes), preds, nll / y.size


def train(
    train_subjects: Sequence[PreparedSubject],
    val_subjects: Sequence[PreparedSubject],
    model_config: ModelConfig,
    train_config: TrainConfig,
    seed: int = 0,
    key: tuple = (),
    progress: Callable[[str], None] | None = None,
) -> tuple[SleepStager, TrainHistory]:
    """Train from scratch; returns the best-validation-accuracy weights.

    Without validation subjects the final weights are returned.
    """
    if not train_subjects or sum(s.num_epochs for s in train_subjects) == 0:
        raise ValueError("empty training split")
    overlap = {s.subject_id for s in train_subjects} & {s.subject_id for s in val_subjects}
    if overlap:
        raise AssertionError(f"subjects in both training and validation splits: {sorted(overlap)}")

    init_rng, order_rng, drop_rng = _streams(seed, key)
    model = SleepStager(model_config, seed=init_rng)
    hyper = AdamHyper(train_config.learning_rate, train_config.weight_decay)
    weights = class_weights(train_subjects, model_config.num_classes) if train_config.class_weighting else None
    history = TrainHistory()
    best_acc = -math.inf
    best = None

    for epoch in range(train_config.epochs):
        lr = step_lr(epoch, train_config.learning_rate, train_config.lr_step, train_config.lr_gamma)
        total, count = 0.0, 0
        run_length = max(1, train_config.batch_size // train_config.runs_per_batch)
        runs = training_runs(train_subjects, run_length, order_rng)
        for i in range(0, len(runs), train_config.runs_per_batch):
            pieces = [(train_subjects[si], a, b) for si, a, b in runs[i : i + train_config.runs_per_batch]]
            tokens, windows, targets = merge_runs(model, pieces)
            model.store.zero_grad()
            logits = model.forward_chunk(tokens, windows, training=True, rng=drop_rng)
            loss = ops.cross_entropy(logits, targets, weights)
            loss.backward()
            adam_step(model.store, hyper, lr)
            total += float(loss.data) * targets.size
            count += targets.size
        history.train_loss.append(total / count)
        history.learning_rate.append(lr)
        if val_subjects:
            report, _, val_loss = evaluate(model, val_subjects, train_config.eval_chunk)
            history.val_loss.append(val_loss)
            history.val_accuracy.append(report.accuracy)
            if report.accuracy > best_acc:
                best_acc = report.accuracy
                best = model.store.arrays()
                history.best_epoch = epoch
        else:
            history.val_loss.append(None)
            history.val_accuracy.append(None)
            history.best_epoch = epoch
        if progress:
            va = history.val_accuracy[-1]
            progress(f"epoch {epoch + 1}/{train_config.epochs} lr={lr:.0e} train_loss={history.train_loss[-1]:.4f}" + (f" val_acc={va:.4f}" if va is not None else ""))
    if best is not None:
        model.store.load_arrays(best)
    return model, history


def split_validation(train_ids: Sequence[str], fraction: float, rng: np.random.Generator) -> tuple[list[str], list[str]]:
    """Hold out round(fraction * n) training subjects (at least one when fraction > 0 and n >= 2)."""
    ids = sorted(train_ids)
    if fraction <= 0 or len(ids) < 2:
        return ids, []
    n_val = min(len(ids) - 1, max(1, int(round(fraction * len(ids)))))
    picked = set(rng.choice(len(ids), size=n_val, replace=False).tolist())
    return [s for i, s in enumerate(ids) if i not in picked], [s for i, s in enumerate(ids) if i in picked]


MODEL_CONFIG = "model_config.json"


def save_model(model: SleepStager, directory: str | Path) -> str:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    model.config.save(directory / MODEL_CONFIG)
    return save_checkpoint(model.store, directory)


def load_model(directory: str | Path) -> SleepStager:
    directory = Path(directory)
    cfg = ModelConfig.load(directory / MODEL_CONFIG)
    model = SleepStager(cfg, seed=0)
    model.store.load_arrays(load_checkpoint(directory))
    return model
