from .core import (
    AgreementStats,
    KappaWorkspace,
    accuracy,
    agreement,
    auc_pr,
    auc_roc,
    binarize,
    cohens_kappa,
    confusion_matrix,
    dice,
    f1_score,
    kappa_workspace,
    mae,
    precision_recall_curve,
    quadratic_weighted_kappa,
    row_normalized,
)
from .report import MetricReport, format_per_label_table, format_table

__all__ = [
    "AgreementStats", "KappaWorkspace", "MetricReport", "accuracy", "agreement", "auc_pr",
    "auc_roc", "binarize", "cohens_kappa", "confusion_matrix", "dice", "f1_score",
    "format_per_label_table", "format_table", "kappa_workspace", "mae",
    "precision_recall_curve", "quadratic_weighted_kappa", "row_normalized",
]
