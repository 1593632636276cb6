"""Ranking and detection metrics: AP, ROC-AUC, mAP/d-prime, window F1."""
from __future__ import annotations

import logging
from typing import Dict, Tuple

import numpy as np
from scipy.special import ndtri

from seqshot.core.errors import MetricError

logger = logging.getLogger(__name__)

# d' is finite only for AUC in (0, 1); perfect rankings are clipped here.
AUC_CLIP = 1e-7


def _check_binary(scores: np.ndarray, labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).astype(bool).ravel()
    if s.shape != y.shape:
        raise MetricError(f"{s.size} scores for {y.size} labels")
    if not y.any() or y.all():
        raise MetricError("need at least one positive and one negative")
    return s, y


def auprc(scores, labels) -> float:
    """Average precision over descending-score thresholds; tied scores share one threshold."""
    s, y = _check_binary(scores, labels)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # last index of each run of tied scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[ends]
    n_seen = ends + 1
    recall = tp / y.sum()
    precision = tp / n_seen
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def roc_auc(scores, labels) -> float:
    """Probability a positive outranks a negative; ties count one half."""
    s, y = _check_binary(scores, labels)
    pos, neg = s[y], s[~y]
    greater = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return float((greater + 0.5 * ties) / (pos.size * neg.size))


def dprime(auc: float) -> float:
    a = float(np.clip(auc, AUC_CLIP, 1.0 - AUC_CLIP))
    return float(np.sqrt(2.0) * ndtri(a))


def map_and_dprime(scores, labels) -> Tuple[float, float]:
    """Mean per-class AP and d' of the mean per-class ROC-AUC.

    ``scores`` and ``labels`` are (items, classes). Classes without both
    positives and negatives are skipped with a warning.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 2 or s.shape != y.shape:
        raise MetricError(f"expected matching (items, classes) arrays, got {s.shape} and {y.shape}")
    if s.shape[1] < 2:
        raise MetricError(f"need at least 2 classes, got {s.shape[1]}")
    aps, aucs = [], []
    for c in range(s.shape[1]):
        col = y[:, c].astype(bool)
        if not col.any() or col.all():
            logger.warning("class %d has a single label value; excluded from mAP", c)
            continue
        aps.append(auprc(s[:, c], col))
        aucs.append(roc_auc(s[:, c], col))
    if not aps:
        raise MetricError("no class has both positives and negatives")
    return float(np.mean(aps)), dprime(float(np.mean(aucs)))


def precision_recall_f1(pred, truth) -> Dict[str, float]:
    """Element-wise binary precision/recall/F1 (empty sets score 0)."""
    p = np.asarray(pred).astype(bool)
    t = np.asarray(truth).astype(bool)
    if p.shape != t.shape:
        raise MetricError(f"prediction shape {p.shape} != truth shape {t.shape}")
    tp = float(np.sum(p & t))
    precision = tp / p.sum() if p.any() else 0.0
    recall = tp / t.sum() if t.any() else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return {"precision": precision, "recall": recall, "f1": f1, "support": int(t.sum())}
