"""Brute-force reference implementations used only by tests.

Written with plain Python loops over pixels / pairs / thresholds so they share
no code path with drbench.metrics.
"""

from __future__ import annotations


def _flat(x):
    return [float(v) for v in x.ravel()]


def dice(pred, gt, threshold=0.5):
    p = [v > threshold for v in _flat(pred)]
    g = [v > 0.5 for v in _flat(gt)]
    inter = sum(1 for a, b in zip(p, g) if a and b)
    total = sum(p) + sum(g)
    return 1.0 if total == 0 else 2.0 * inter / total


def mae(pred, gt):
    p, g = _flat(pred), _flat(gt)
    return sum(abs(a - b) for a, b in zip(p, g)) / len(p)


def _pooled(preds, gts):
    scores, labels = [], []
    for p, g in zip(preds, gts):
        scores += _flat(p)
        labels += [v > 0.5 for v in _flat(g)]
    return scores, labels


def auc_roc(preds, gts):
    scores, labels = _pooled(preds, gts)
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = 0.0
    for a in pos:
        for b in neg:
            if a > b:
                wins += 1.0
            elif a == b:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def auc_pr(preds, gts):
    """Threshold sweep: for each distinct score t (descending) classify
    score >= t as positive and accumulate (recall step) * precision."""
    scores, labels = _pooled(preds, gts)
    n_pos = sum(labels)
    area, prev_recall = 0.0, 0.0
    for t in sorted(set(scores), reverse=True):
        tp = sum(1 for s, y in zip(scores, labels) if s >= t and y)
        fp = sum(1 for s, y in zip(scores, labels) if s >= t and not y)
        recall = tp / n_pos
        precision = tp / (tp + fp)
        area += (recall - prev_recall) * precision
        prev_recall = recall
    return area


def quadratic_weighted_kappa(pred, gt, k=5):
    n = len(pred)
    num = 0.0
    for a, b in zip(pred, gt):
        num += (a - b) ** 2 / (k - 1) ** 2
    num /= n
    hist_p = [sum(1 for a in pred if a == i) / n for i in range(k)]
    hist_g = [sum(1 for b in gt if b == j) / n for j in range(k)]
    den = 0.0
    for i in range(k):
        for j in range(k):
            den += (i - j) ** 2 / (k - 1) ** 2 * hist_p[i] * hist_g[j]
    return 1.0 if den == 0 else 1.0 - num / den


def cohens_kappa_1d(pred, gt):
    n = len(pred)
    p_o = sum(1 for a, b in zip(pred, gt) if a == b) / n
    classes = set(pred) | set(gt)
    p_e = sum((sum(1 for a in pred if a == c) / n) * (sum(1 for b in gt if b == c) / n) for c in classes)
    return (p_o - p_e) / (1 - p_e)


def f1_1d(pred, gt):
    tp = sum(1 for a, b in zip(pred, gt) if a and b)
    fp = sum(1 for a, b in zip(pred, gt) if a and not b)
    fn = sum(1 for a, b in zip(pred, gt) if not a and b)
    if tp == 0:
        return 0.0
    p = tp / (tp + fp)
    r = tp / (tp + fn)
    return 2 * p * r / (p + r)


def flood_fill_components(mask):
    """8-connected component count by explicit stack-based flood fill."""
    h, w = mask.shape
    seen = [[False] * w for _ in range(h)]
    count = 0
    for y in range(h):
        for x in range(w):
            if mask[y, x] and not seen[y][x]:
                count += 1
                stack = [(y, x)]
                seen[y][x] = True
                while stack:
                    cy, cx = stack.pop()
                    for dy in (-1, 0, 1):
                        for dx in (-1, 0, 1):
                            ny, nx = cy + dy, cx + dx
                            if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny][nx]:
                                seen[ny][nx] = True
                                stack.append((ny, nx))
    return count


def central_difference(f, x, h=1e-6):
    """Numerical gradient of scalar f at float64 numpy array x."""
    grad = x.copy() * 0.0
    it = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(it.size):
        orig = it[i]
        it[i] = orig + h
        fp = f(x)
        it[i] = orig - h
        fm = f(x)
        it[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return grad
