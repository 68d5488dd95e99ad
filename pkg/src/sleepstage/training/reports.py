"""Hypnogram export and report writers.

Machine-readable reports hold no timings or paths, so identical seeded runs
produce identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from ..signal_io import STAGE_NAMES, Hypnogram
from .crossval import AblationRow, CrossValResult
from .metrics import MetricsReport


def export_hypnogram(truth: Hypnogram, predicted: Hypnogram, path: str | Path) -> float:
    """Tab-separated epoch_index / truth_label / predicted_label plus a '#' agreement line.

    Returns the agreement fraction.
    """
    t = np.asarray(truth.labels)
    p = np.asarray(predicted.labels)
    if t.shape != p.shape:
        raise ValueError(f"hypnogram lengths differ: truth {t.size}, predicted {p.size}")
    matched = int((t == p).sum())
    agreement = matched / t.size if t.size else float("nan")
    lines = ["epoch_index\ttruth_label\tpredicted_label"]
    lines += [f"{i}\t{STAGE_NAMES[a]}\t{STAGE_NAMES[b]}" for i, (a, b) in enumerate(zip(t, p))]
    lines.append(f"# agreement={agreement:.6f} matched={matched} total={t.size}")
    Path(path).write_text("\n".join(lines) + "\n")
    return agreement


def read_hypnogram_table(path: str | Path) -> tuple[Hypnogram, Hypnogram]:
    truth, pred = [], []
    for line in Path(path).read_text().splitlines()[1:]:
        if line.startswith("#"):
            continue
        _, a, b = line.split("\t")
        truth.append(STAGE_NAMES.index(a))
        pred.append(STAGE_NAMES.index(b))
    return Hypnogram(np.array(truth)), Hypnogram(np.array(pred))


def dump_json(obj, path: str | Path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True, allow_nan=True) + "\n")


def metrics_table(report: MetricsReport) -> str:
    lines = [
        f"accuracy {report.accuracy:.4f}   macro-F1 {report.macro_f1:.4f}   kappa {report.kappa:.4f}   epochs {report.num_scored}",
        "",
        "stage   precision  recall   F1",
    ]
    for i, name in enumerate(STAGE_NAMES[: len(report.f1)]):
        flag = "  (undefined)" if i in report.undefined_f1 else ""
        lines.append(f"{name:<6}  {report.precision[i]:9.4f}  {report.recall[i]:6.4f}  {report.f1[i]:6.4f}{flag}")
    lines += ["", "confusion (rows truth, columns predicted)", "      " + "".join(f"{n:>7}" for n in STAGE_NAMES)]
    for i, row in enumerate(report.confusion):
        lines.append(f"{STAGE_NAMES[i]:<6}" + "".join(f"{v:7d}" for v in row))
    return "\n".join(lines)


def crossval_table(result: CrossValResult) -> str:
    s = result.summary()
    lines = ["fold  subjects  accuracy  macro-F1   kappa"]
    for f in result.folds:
        m = f.metrics
        lines.append(f"{f.fold:>4}  {len(f.test_subjects):>8}  {m.accuracy:8.4f}  {m.macro_f1:8.4f}  {m.kappa:6.4f}")
    lines += [
        "",
        f"accuracy  {s['accuracy_mean']:.4f} ± {s['accuracy_std']:.4f}",
        f"macro-F1  {s['macro_f1_mean']:.4f} ± {s['macro_f1_std']:.4f}",
        f"kappa     pooled {s['kappa_pooled']:.4f}   per-fold mean {s['kappa_fold_mean']:.4f} ± {s['kappa_fold_std']:.4f}",
        "",
        "pooled over all folds:",
        metrics_table(result.pooled),
    ]
    return "\n".join(lines)


def ablation_table(rows: Sequence[AblationRow]) -> str:
    lines = [f"{'variant':<28} {'accuracy':>16} {'macro-F1':>16} {'kappa':>7}"]
    for r in rows:
        s = r.result.summary()
        lines.append(
            f"{r.name:<28} {s['accuracy_mean']:.4f} ± {s['accuracy_std']:.4f} {s['macro_f1_mean']:.4f} ± {s['macro_f1_std']:.4f} {s['kappa_pooled']:7.4f}"
        )
    return "\n".join(lines)
