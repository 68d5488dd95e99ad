"""Confusion-matrix metrics: accuracy, per-class precision/recall/F1, macro F1, Cohen's kappa.

Confusion rows index the true class, columns the predicted class.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def confusion_matrix(truth, pred, num_classes: int = 5) -> np.ndarray:
    truth = np.asarray(truth, dtype=np.intp)
    pred = np.asarray(pred, dtype=np.intp)
    if truth.shape != pred.shape:
        raise ValueError(f"truth and prediction lengths differ: {truth.shape} vs {pred.shape}")
    for name, arr in (("truth", truth), ("prediction", pred)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"{name} labels outside 0..{num_classes - 1}")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (truth, pred), 1)
    return cm


def kappa_from_confusion(cm: np.ndarray) -> float:
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    if total == 0:
        return float("nan")
    p_o = np.trace(cm) / total
    p_e = float(cm.sum(axis=1) @ cm.sum(axis=0)) / total**2
    if p_e == 1.0:
        # both raters used one and the same class throughout
        return 1.0 if p_o == 1.0 else 0.0
    return float((p_o - p_e) / (1.0 - p_e))


@dataclass
class MetricsReport:
    confusion: np.ndarray
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    macro_f1: float
    kappa: float
    undefined_f1: list[int] = field(default_factory=list)

    @property
    def num_scored(self) -> int:
        return int(self.confusion.sum())

    def to_dict(self) -> dict:
        return {
            "num_scored": self.num_scored,
            "accuracy": float(self.accuracy),
            "macro_f1": float(self.macro_f1),
            "kappa": float(self.kappa),
            "precision": [float(v) for v in self.precision],
            "recall": [float(v) for v in self.recall],
            "f1": [float(v) for v in self.f1],
            "undefined_f1": list(self.undefined_f1),
            "confusion": self.confusion.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            confusion=np.asarray(d["confusion"], dtype=np.int64),
            accuracy=d["accuracy"],
            precision=np.asarray(d["precision"]),
            recall=np.asarray(d["recall"]),
            f1=np.asarray(d["f1"]),
            macro_f1=d["macro_f1"],
            kappa=d["kappa"],
            undefined_f1=list(d.get("undefined_f1", [])),
        )


def report_from_confusion(cm: np.ndarray) -> MetricsReport:
    """All metrics from a confusion matrix.

    Precision or recall with a zero denominator is taken as 0. A class with
    no true and no predicted epochs has an undefined F1; it is recorded as 0
    and listed in ``undefined_f1``. Macro F1 averages over every class.
    """
    cm = np.asarray(cm, dtype=np.int64)
    k = cm.shape[0]
    total = cm.sum()
    tp = np.diag(cm).astype(np.float64)
    pred_count = cm.sum(axis=0).astype(np.float64)
    true_count = cm.sum(axis=1).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(pred_count > 0, tp / pred_count, 0.0)
        recall = np.where(true_count > 0, tp / true_count, 0.0)
        denom = pred_count + true_count
        f1 = np.where(denom > 0, 2.0 * tp / denom, 0.0)
    undefined = [int(c) for c in range(k) if denom[c] == 0]
    return MetricsReport(
        confusion=cm,
        accuracy=float(tp.sum() / total) if total else float("nan"),
        precision=precision,
        recall=recall,
        f1=f1,
        macro_f1=float(f1.mean()),
        kappa=kappa_from_confusion(cm),
        undefined_f1=undefined,
    )


def compute_metrics(truth, pred, num_classes: int = 5) -> MetricsReport:
    return report_from_confusion(confusion_matrix(truth, pred, num_classes))
