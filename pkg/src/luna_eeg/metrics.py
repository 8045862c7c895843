"""Classification metrics from predicted labels and class scores."""

from __future__ import annotations

import numpy as np


def confusion_matrix(y_true, y_pred, n_classes: int | None = None) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    k = n_classes or int(max(y_true.max(initial=0), y_pred.max(initial=0))) + 1
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def balanced_accuracy(y_true, y_pred, n_classes=None) -> float:
    """Mean per-class recall over classes present in ``y_true``."""
    cm = confusion_matrix(y_true, y_pred, n_classes)
    support = cm.sum(axis=1)
    present = support > 0
    return float(np.mean(np.diag(cm)[present] / support[present]))


def cohen_kappa(y_true, y_pred, n_classes=None) -> float:
    cm = confusion_matrix(y_true, y_pred, n_classes).astype(float)
    n = cm.sum()
    po = np.trace(cm) / n
    pe = (cm.sum(axis=0) @ cm.sum(axis=1)) / n ** 2
    return 1.0 if pe == 1.0 else float((po - pe) / (1.0 - pe))


def weighted_f1(y_true, y_pred, n_classes=None) -> float:
    cm = confusion_matrix(y_true, y_pred, n_classes).astype(float)
    tp = np.diag(cm)
    pred = cm.sum(axis=0)
    support = cm.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        prec = np.where(pred > 0, tp / pred, 0.0)
        rec = np.where(support > 0, tp / support, 0.0)
        f1 = np.where(prec + rec > 0, 2 * prec * rec / (prec + rec), 0.0)
    return float((f1 * support).sum() / support.sum())


def _binary_auroc(y, score) -> float:
    """Mann-Whitney U statistic with average ranks for ties."""
    y = np.asarray(y, dtype=bool)
    n_pos, n_neg = y.sum(), (~y).sum()
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    order = np.argsort(score, kind="mergesort")
    s = np.asarray(score)[order]
    ranks = np.empty(len(s))
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and s[j + 1] == s[i]:
            j += 1
        ranks[i:j + 1] = 0.5 * (i + j) + 1.0
        i = j + 1
    r = np.empty(len(s))
    r[order] = ranks
    return float((r[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def _binary_auc_pr(y, score) -> float:
    """Trapezoidal area under the precision-recall curve, anchored at (recall 0, precision 1)."""
    y = np.asarray(y, dtype=bool)
    if y.sum() == 0:
        return float("nan")
    order = np.argsort(-np.asarray(score), kind="mergesort")
    s, yy = np.asarray(score)[order], y[order]
    tps = np.cumsum(yy)
    fps = np.cumsum(~yy)
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]  # final index of each distinct threshold
    tp, fp = tps[last], fps[last]
    precision = tp / (tp + fp)
    recall = tp / y.sum()
    recall = np.r_[0.0, recall]
    precision = np.r_[1.0, precision]
    return float(np.sum(np.diff(recall) * (precision[1:] + precision[:-1]) / 2))


def _one_vs_rest(fn, y_true, scores):
    scores = np.asarray(scores, dtype=float)
    y_true = np.asarray(y_true, dtype=int)
    if scores.ndim == 1:
        return fn(y_true == 1, scores)
    if scores.shape[1] == 2:
        return fn(y_true == 1, scores[:, 1])
    vals = [fn(y_true == k, scores[:, k]) for k in range(scores.shape[1]) if np.any(y_true == k)]
    return float(np.mean(vals))


def auroc(y_true, scores) -> float:
    """Binary AUROC, or macro one-vs-rest for (N, K) scores with K > 2."""
    return _one_vs_rest(_binary_auroc, y_true, scores)


def auc_pr(y_true, scores) -> float:
    return _one_vs_rest(_binary_auc_pr, y_true, scores)


def classification_report(y_true, scores, n_classes: int) -> dict:
    scores = np.asarray(scores, dtype=float)
    y_pred = scores.argmax(axis=1)
    return {
        "accuracy": float(np.mean(y_pred == np.asarray(y_true))),
        "balanced_accuracy": balanced_accuracy(y_true, y_pred, n_classes),
        "auroc": auroc(y_true, scores),
        "auc_pr": auc_pr(y_true, scores),
        "cohen_kappa": cohen_kappa(y_true, y_pred, n_classes),
        "weighted_f1": weighted_f1(y_true, y_pred, n_classes),
    }
