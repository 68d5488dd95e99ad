"""Subject-wise cross-validation and the ablation grid."""

from __future__ import annotations

import concurrent.futures as cf
import itertools
import logging
import multiprocessing as mp
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..model import ModelConfig
from .folds import FoldPlan, assert_disjoint
from .metrics import MetricsReport, report_from_confusion
from .trainer import PreparedSubject, TrainConfig, TrainHistory, evaluate, split_validation, train

log = logging.getLogger(__name__)

# spawn-key purposes under (seed, fold)
_TRAIN_KEY = 0
_SPLIT_KEY = 1


@dataclass
class FoldResult:
    fold: int
    test_subjects: list[str]
    train_subjects: list[str]
    val_subjects: list[str]
    metrics: MetricsReport
    predictions: dict[str, np.ndarray]
    history: TrainHistory
    checksum: str

    def to_dict(self) -> dict:
        return {
            "fold": self.fold,
            "test_subjects": self.test_subjects,
            "train_subjects": self.train_subjects,
            "val_subjects": self.val_subjects,
            "metrics": self.metrics.to_dict(),
            "history": self.history.to_dict(),
            "weights_sha256": self.checksum,
        }


@dataclass
class CrossValResult:
    plan: FoldPlan
    folds: list[FoldResult]
    model_config: ModelConfig
    train_config: TrainConfig
    seed: int
    pooled: MetricsReport = field(init=False)

    def __post_init__(self):
        self.pooled = report_from_confusion(sum(f.metrics.confusion for f in self.folds))

    def _stat(self, name: str) -> tuple[float, float]:
        vals = np.array([getattr(f.metrics, name) for f in self.folds], dtype=np.float64)
        return float(vals.mean()), float(vals.std())

    def summary(self) -> dict:
        acc_m, acc_s = self._stat("accuracy")
        mf1_m, mf1_s = self._stat("macro_f1")
        kap_m, kap_s = self._stat("kappa")
        return {
            "accuracy_mean": acc_m,
            "accuracy_std": acc_s,
            "macro_f1_mean": mf1_m,
            "macro_f1_std": mf1_s,
            "kappa_pooled": float(self.pooled.kappa),
            "kappa_fold_mean": kap_m,
            "kappa_fold_std": kap_s,
            "accuracy_pooled": float(self.pooled.accuracy),
            "macro_f1_pooled": float(self.pooled.macro_f1),
        }

    def predictions(self) -> dict[str, np.ndarray]:
        out = {}
        for f in self.folds:
            out.update(f.predictions)
        return out

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "model_config": self.model_config.to_dict(),
            "train_config": self.train_config.to_dict(),
            "fold_plan": self.plan.to_dict(),
            "summary": self.summary(),
            "pooled": self.pooled.to_dict(),
            "folds": [f.to_dict() for f in self.folds],
        }


def run_fold(
    subjects: Sequence[PreparedSubject],
    model_config: ModelConfig,
    train_config: TrainConfig,
    plan: FoldPlan,
    fold: int,
    seed: int,
    progress: Callable[[str], None] | None = None,
) -> FoldResult:
    by_id = {s.subject_id: s for s in subjects}
    test_ids = plan.test_subjects(fold)
    split_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(fold, _SPLIT_KEY)))
    train_ids, val_ids = split_validation(plan.train_subjects(fold), train_config.val_fraction, split_rng)
    assert_disjoint(train_ids, test_ids)
    assert_disjoint(val_ids, test_ids)
    assert_disjoint(train_ids, val_ids)
    model, history = train(
        [by_id[s] for s in train_ids],
        [by_id[s] for s in val_ids],
        model_config,
        train_config,
        seed=seed,
        key=(fold, _TRAIN_KEY),
        progress=(lambda msg: progress(f"fold {fold}: {msg}")) if progress else None,
    )
    test = [by_id[s] for s in test_ids]
    metrics, preds, _ = evaluate(model, test, train_config.eval_chunk)
    return FoldResult(fold, test_ids, train_ids, val_ids, metrics, preds, history, model.store.checksum())


_SHARED: dict = {}


def _fold_worker(fold: int) -> FoldResult:
    s = _SHARED
    return run_fold(s["subjects"], s["model_config"], s["train_config"], s["plan"], fold, s["seed"], None)


def cross_validate(
    subjects: Sequence[PreparedSubject],
    model_config: ModelConfig,
    train_config: TrainConfig,
    plan: FoldPlan,
    seed: int = 0,
    parallel: int = 1,
    progress: Callable[[str], None] | None = None,
) -> CrossValResult:
    """Train one model per fold and score its held-out subjects.

    With ``parallel > 1`` folds run in forked worker processes; results are
    identical to the serial path because every fold owns its random streams.
    """
    ids = {s.subject_id for s in subjects}
    if ids != set(plan.assignments):
        raise ValueError("fold plan does not cover exactly the supplied subjects")
    folds = list(range(plan.k))
    if parallel > 1 and len(folds) > 1:
        _SHARED.update(subjects=list(subjects), model_config=model_config, train_config=train_config, plan=plan, seed=seed)
        try:
            with cf.ProcessPoolExecutor(max_workers=parallel, mp_context=mp.get_context("fork")) as pool:
                results = list(pool.map(_fold_worker, folds))
        finally:
            _SHARED.clear()
    else:
        results = [run_fold(subjects, model_config, train_config, plan, f, seed, progress) for f in folds]
    covered = [s for r in results for s in r.test_subjects]
    if sorted(covered) != sorted(ids):
        raise AssertionError("held-out folds do not cover every subject exactly once")
    return CrossValResult(plan, results, model_config, train_config, seed)


MODALITY_SUBSETS = (("EEG1", "EEG2", "EOG"), ("EEG1",), ("EEG2",), ("EOG",))


def ablation_variants(base: ModelConfig) -> list[tuple[str, ModelConfig]]:
    """{gcn, concat} x {full, cnn_only} x {all, EEG1, EEG2, EOG}."""
    out = []
    for fusion, temporal, mods in itertools.product(("gcn", "concat"), ("full", "cnn_only"), MODALITY_SUBSETS):
        name = f"{fusion}/{temporal}/{'+'.join(mods)}"
        out.append((name, base.replace(fusion=fusion, temporal=temporal, modalities=mods)))
    return out


@dataclass
class AblationRow:
    name: str
    result: CrossValResult

    def to_dict(self) -> dict:
        cfg = self.result.model_config
        return {
            "variant": self.name,
            "fusion": cfg.fusion,
            "temporal": cfg.temporal,
            "modalities": list(cfg.modalities),
            **self.result.summary(),
            "crossval": self.result.to_dict(),
        }


def ablation_suite(
    subjects: Sequence[PreparedSubject],
    base_config: ModelConfig,
    train_config: TrainConfig,
    plan: FoldPlan,
    seed: int = 0,
    parallel: int = 1,
    variants: Sequence[str] | None = None,
    progress: Callable[[str], None] | None = None,
) -> list[AblationRow]:
    """Cross-validate every variant with the same fold plan and seed."""
    rows = []
    for name, cfg in ablation_variants(base_config):
        if variants is not None and name not in variants:
            continue
        if progress:
            progress(f"variant {name}")
        res = cross_validate(subjects, cfg, train_config, plan, seed, parallel, progress)
        rows.append(AblationRow(name, res))
    return rows
