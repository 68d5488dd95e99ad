from .crossval import (
    MODALITY_SUBSETS,
    AblationRow,
    CrossValResult,
    FoldResult,
    ablation_suite,
    ablation_variants,
    cross_validate,
    run_fold,
)
from .folds import FoldPlan, assert_disjoint, make_folds
from .metrics import MetricsReport, compute_metrics, confusion_matrix, kappa_from_confusion, report_from_confusion
from .reports import ablation_table, crossval_table, dump_json, export_hypnogram, metrics_table, read_hypnogram_table
from .trainer import (
    PreparedSubject,
    TrainConfig,
    TrainHistory,
    evaluate,
    load_model,
    predict_proba,
    prepare_subject,
    save_model,
    split_validation,
    train,
)

__all__ = [
    "MODALITY_SUBSETS",
    "AblationRow",
    "CrossValResult",
    "FoldPlan",
    "FoldResult",
    "MetricsReport",
    "PreparedSubject",
    "TrainConfig",
    "TrainHistory",
    "ablation_suite",
    "ablation_table",
    "ablation_variants",
    "assert_disjoint",
    "compute_metrics",
    "confusion_matrix",
    "cross_validate",
    "crossval_table",
    "dump_json",
    "evaluate",
    "export_hypnogram",
    "kappa_from_confusion",
    "load_model",
    "make_folds",
    "metrics_table",
    "predict_proba",
    "prepare_subject",
    "read_hypnogram_table",
    "report_from_confusion",
    "run_fold",
    "save_model",
    "split_validation",
    "train",
]
