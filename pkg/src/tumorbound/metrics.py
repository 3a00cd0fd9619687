"""Sequence classification metrics, mask overlap and reader agreement."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata


class MetricError(ValueError):
    pass


@dataclass
class SeqMetrics:
    f1: float
    accuracy: float
    precision: float
    recall: float
    auc: float | None = None

    def as_percent(self, digits: int = 2) -> dict:
        return {k: (None if v is None else round(100.0 * v, digits)) for k, v in asdict(self).items()}


def _flatten(preds, gts):
    if len(preds) == 0 or len(gts) == 0:
        raise MetricError("no sequences")
    if len(preds) != len(gts):
        raise MetricError(f"{len(preds)} predicted vs {len(gts)} reference sequences")
    for i, (p, g) in enumerate(zip(preds, gts)):
        if len(p) != len(g):
            raise MetricError(f"sequence {i}: length {len(p)} vs {len(g)}")
    return (np.concatenate([np.asarray(p, dtype=np.int64) for p in preds]),
            np.concatenate([np.asarray(g, dtype=np.int64) for g in gts]))


def confusion(preds, gts, n_classes: int = 3) -> np.ndarray:
    """Counts with rows = reference class, columns = predicted class."""
    p, g = _flatten(preds, gts)
    return np.bincount(g * n_classes + p, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def per_class(cm: np.ndarray):
    """Per-class (precision, recall, f1); 0 wherever a denominator vanishes."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    pred_tot = cm.sum(axis=0)
    true_tot = cm.sum(axis=1)
    prec = np.divide(tp, pred_tot, out=np.zeros_like(tp), where=pred_tot > 0)
    rec = np.divide(tp, true_tot, out=np.zeros_like(tp), where=true_tot > 0)
    s = prec + rec
    f1 = np.divide(2 * prec * rec, s, out=np.zeros_like(tp), where=s > 0)
    return prec, rec, f1


def rank_auc(scores, positive) -> float:
    """Mann-Whitney AUC; tied scores share average ranks (count 1/2)."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n1 = int(positive.sum())
    n0 = positive.size - n1
    if n1 == 0 or n0 == 0:
        raise MetricError("AUC needs both positive and negative samples")
    ranks = rankdata(scores)
    u = ranks[positive].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def macro_auc(probs, gts_flat, n_classes: int) -> float | None:
    """One-vs-rest AUC averaged over classes that have both positives and negatives."""
    vals = []
    for c in range(n_classes):
        pos = gts_flat == c
        if pos.all() or not pos.any():
            continue
        vals.append(rank_auc(probs[:, c], pos))
    return float(np.mean(vals)) if vals else None


def seq_metrics(preds, gts, probs=None, n_classes: int = 3) -> SeqMetrics:
    cm = confusion(preds, gts, n_classes)
    prec, rec, f1 = per_class(cm)
    acc = float(np.trace(cm) / cm.sum())
    auc = None
    if probs is not None:
        pr = np.concatenate([np.asarray(x, dtype=np.float64) for x in probs])
        _, g = _flatten(preds, gts)
        if pr.shape != (g.size, n_classes):
            raise MetricError(f"probabilities {pr.shape} do not match {g.size} vertices")
        auc = macro_auc(pr, g, n_classes)
    return SeqMetrics(f1=float(f1.mean()), accuracy=acc, precision=float(prec.mean()),
                      recall=float(rec.mean()), auc=auc)


def macro_f1(gts, preds, n_classes: int = 3) -> float:
    return float(per_class(confusion(preds, gts, n_classes))[2].mean())


def dsc(a, b) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise MetricError(f"mask shapes differ: {a.shape} vs {b.shape}")
    tot = int(a.sum()) + int(b.sum())
    if tot == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / tot


def one_hot(seqs, n_classes: int = 3):
    return [np.eye(n_classes)[np.asarray(s, dtype=np.int64)] for s in seqs]


def inter_reader(a, b, n_classes: int = 3) -> SeqMetrics:
    """Reader ``a`` scored against reader ``b`` as reference; AUC from a's one-hot labels."""
    return seq_metrics(a, b, probs=one_hot(a, n_classes), n_classes=n_classes)
