"""Segmentation, grading and multi-label agreement metrics (numpy, float64)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateLabels, LengthMismatch, ShapeMismatch, ValueOutOfRange


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs ground truth {gt.shape}")
    return pred, gt.astype(bool)


def binarize(pred, threshold: float = 0.5) -> np.ndarray:
    return np.asarray(pred) > threshold


def dice(pred, gt, threshold: float = 0.5) -> float:
    """Dice overlap of ``pred > threshold`` with ``gt``; 1.0 when both are empty."""
    pred, gt = _pair(pred, gt)
    p = pred > threshold
    denom = int(p.sum()) + int(gt.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & gt).sum()) / denom


def mae(pred, gt) -> float:
    pred, gt = _pair(pred, gt)
    return float(np.abs(pred - gt).mean())


def _pool(preds, gts):
    if isinstance(preds, np.ndarray) and isinstance(gts, np.ndarray):
        preds, gts = [preds], [gts]
    if len(preds) != len(gts):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(gts)} ground truths")
    pairs = [_pair(p, g) for p, g in zip(preds, gts)]
    if not pairs:
        raise DegenerateLabels("no pixels to score")
    scores = np.concatenate([p.ravel() for p, _ in pairs])
    labels = np.concatenate([g.ravel() for _, g in pairs])
    return scores, labels


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    boundaries = np.flatnonzero(np.diff(xs)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [len(xs)]))
    avg = (starts + ends + 1) / 2.0  # 1-based average rank of each tie group
    ranks = np.empty(len(x))
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def auc_roc(preds, gts) -> float:
    """Pixel-pooled ROC AUC via the rank statistic (ties count one half)."""
    scores, labels = _pool(preds, gts)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("AUC-ROC needs both positive and negative pixels")
    ranks = _average_ranks(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def precision_recall_curve(scores, labels):
    """Precision and recall at each distinct threshold, highest threshold first."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    last = np.concatenate((np.flatnonzero(np.diff(s)), [len(s) - 1]))
    tp, fp = tp[last], fp[last]
    return tp / (tp + fp), tp / max(int(labels.sum()), 1), s[last]


def auc_pr(preds, gts) -> float:
    """Pixel-pooled area under the PR curve, step-wise over distinct thresholds:
    sum of (R_n - R_{n-1}) * P_n."""
    scores, labels = _pool(preds, gts)
    if not labels.any():
        raise DegenerateLabels("AUC-PR needs at least one positive pixel")
    precision, recall, _ = precision_recall_curve(scores, labels)
    steps = np.diff(np.concatenate(([0.0], recall)))
    return float(np.sum(steps * precision))


def _ratings(pred, gt, k):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape or pred.ndim != 1:
        raise LengthMismatch(f"rating vectors differ: {pred.shape} vs {gt.shape}")
    for v in (pred, gt):
        if v.size and (not np.issubdtype(v.dtype, np.integer) and not np.all(v == np.round(v))):
            raise ValueOutOfRange("ratings must be integers")
        if v.size and (v.min() < 0 or v.max() >= k):
            raise ValueOutOfRange(f"ratings must lie in [0, {k})")
    return pred.astype(np.int64), gt.astype(np.int64)


def confusion_matrix(pred, gt, k: int = 5) -> np.ndarray:
    """``[i, j]`` counts samples with ground truth ``i`` predicted as ``j``."""
    pred, gt = _ratings(pred, gt, k)
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (gt, pred), 1)
    return cm


def row_normalized(cm) -> np.ndarray:
    cm = np.asarray(cm, dtype=np.float64)
    sums = cm.sum(axis=1, keepdims=True)
    return np.divide(cm, sums, out=np.zeros_like(cm), where=sums > 0)


@dataclass
class KappaWorkspace:
    observed: np.ndarray
    weights: np.ndarray
    expected: np.ndarray


def kappa_workspace(pred, gt, k: int = 5) -> KappaWorkspace:
    pred, gt = _ratings(pred, gt, k)
    if pred.size == 0:
        raise LengthMismatch("need at least one rating pair")
    observed = np.zeros((k, k), dtype=np.int64)
    np.add.at(observed, (pred, gt), 1)
    i, j = np.indices((k, k))
    weights = (i - j) ** 2 / float((k - 1) ** 2)
    expected = np.outer(np.bincount(pred, minlength=k), np.bincount(gt, minlength=k)).astype(np.float64)
    expected *= observed.sum() / expected.sum()
    return KappaWorkspace(observed, weights, expected)


def quadratic_weighted_kappa(pred, gt, k: int = 5) -> float:
    """Quadratic weighted kappa; 1.0 when both raters use one identical rating."""
    ws = kappa_workspace(pred, gt, k)
    num = float(np.sum(ws.weights * ws.observed))
    den = float(np.sum(ws.weights * ws.expected))
    if den == 0.0:
        return 1.0
    return 1.0 - num / den


@dataclass
class AgreementStats:
    p_o: float
    p_e: float


def agreement(pred, gt) -> AgreementStats:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape or pred.ndim != 1:
        raise LengthMismatch(f"label vectors differ: {pred.shape} vs {gt.shape}")
    if pred.size == 0:
        raise LengthMismatch("need at least one label pair")
    p_o = float(np.mean(pred == gt))
    classes = np.union1d(pred, gt)
    p_e = float(sum(np.mean(pred == c) * np.mean(gt == c) for c in classes))
    return AgreementStats(p_o, p_e)


def _columns(pred, gt):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise LengthMismatch(f"label arrays differ: {pred.shape} vs {gt.shape}")
    if pred.ndim == 1:
        return [(pred, gt)]
    return [(pred[:, j], gt[:, j]) for j in range(pred.shape[1])]


def cohens_kappa(pred, gt) -> float:
    """(p_o - p_e) / (1 - p_e). 2-D inputs are scored per column and averaged."""
    values = []
    for p, g in _columns(pred, gt):
        a = agreement(p, g)
        if a.p_e >= 1.0:
            raise DegenerateLabels("chance agreement is 1; kappa undefined")
        values.append((a.p_o - a.p_e) / (1.0 - a.p_e))
    return float(np.mean(values))


def f1_score(pred, gt) -> float:
    """Binary F1 (0 when precision + recall = 0); 2-D inputs averaged per column."""
    values = []
    for p, g in _columns(pred, gt):
        p = p.astype(bool)
        g = g.astype(bool)
        tp = int((p & g).sum())
        fp = int((p & ~g).sum())
        fn = int((~p & g).sum())
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        values.append(2 * precision * recall / (precision + recall) if precision + recall else 0.0)
    return float(np.mean(values))


def accuracy(pred, gt) -> float:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise LengthMismatch(f"label arrays differ: {pred.shape} vs {gt.shape}")
    return float(np.mean(pred == gt))
