"""Classification metrics and evaluation reports.

AUC uses the rank-sum (Mann-Whitney U) formulation with midranks for ties,
macro F1 averages per-class F1 unweighted, and every metric is checked in
the test suite against brute-force reference implementations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import MetricError, ShapeError


def _as_1d(a, name):
    arr = np.asarray(a)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-d, got shape {arr.shape}")
    return arr


def accuracy(preds, labels) -> float:
    """Fraction of exact matches."""
    preds = _as_1d(preds, "preds")
    labels = _as_1d(labels, "labels")
    if len(preds) != len(labels) or len(labels) == 0:
        raise ShapeError(f"length mismatch: {len(preds)} preds vs {len(labels)} labels")
    return float(np.mean(preds == labels))


def confusion_matrix(preds, labels, num_classes: int) -> np.ndarray:
    """Counts matrix with true classes on rows, predicted on columns."""
    preds = _as_1d(preds, "preds").astype(int)
    labels = _as_1d(labels, "labels").astype(int)
    if len(preds) != len(labels):
        raise ShapeError(f"length mismatch: {len(preds)} preds vs {len(labels)} labels")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def precision_recall(preds, labels, num_classes: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-class precision and recall, 0 where undefined."""
    cm = confusion_matrix(preds, labels, num_classes)
    tp = np.diag(cm).astype(float)
    pred_pos = cm.sum(axis=0).astype(float)
    true_pos = cm.sum(axis=1).astype(float)
    precision = np.divide(tp, pred_pos, out=np.zeros_like(tp), where=pred_pos > 0)
    recall = np.divide(tp, true_pos, out=np.zeros_like(tp), where=true_pos > 0)
    return precision, recall


def macro_f1(preds, labels, num_classes: int | None = None, weighted: bool = False) -> float:
    """Mean per-class F1; classes with zero precision+recall contribute 0.

    With ``num_classes`` omitted, averaging runs over the classes present in
    either ``preds`` or ``labels`` (degenerate single-class inputs stay
    well-defined).  ``weighted=True`` weights classes by label support.
    """
    preds = _as_1d(preds, "preds").astype(int)
    labels = _as_1d(labels, "labels").astype(int)
    if len(preds) != len(labels) or len(labels) == 0:
        raise ShapeError(f"length mismatch: {len(preds)} preds vs {len(labels)} labels")
    if num_classes is None:
        classes = np.union1d(np.unique(preds), np.unique(labels))
    else:
        classes = np.arange(num_classes)
    f1s = []
    supports = []
    for c in classes:
        tp = float(np.sum((preds == c) & (labels == c)))
        fp = float(np.sum((preds == c) & (labels != c)))
        fn = float(np.sum((preds != c) & (labels == c)))
        p = tp / (tp + fp) if tp + fp > 0 else 0.0
        r = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1s.append(2 * p * r / (p + r) if p + r > 0 else 0.0)
        supports.append(float(np.sum(labels == c)))
    f1s = np.asarray(f1s)
    if weighted:
        supports = np.asarray(supports)
        if supports.sum() == 0:
            raise MetricError("weighted F1 undefined: no label support")
        return float((f1s * supports).sum() / supports.sum())
    return float(f1s.mean())


def _binary_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both classes present")
    ranks = rankdata(scores)  # midranks for ties
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def roc_auc(scores, labels) -> float:
    """ROC AUC via the normalized U statistic; ties count one half.

    Binary mode takes 1-d scores for the positive class and 0/1 labels.
    Multiclass mode takes an (N, m) score matrix and macro-averages
    one-vs-rest AUCs over classes present in the labels.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = _as_1d(labels, "labels").astype(int)
    if scores.ndim == 1:
        if len(scores) != len(labels):
            raise ShapeError(f"length mismatch: {len(scores)} scores vs {len(labels)} labels")
        uniq = set(np.unique(labels).tolist())
        if not uniq <= {0, 1}:
            raise MetricError(f"binary AUC needs 0/1 labels, got {sorted(uniq)}")
        return _binary_auc(scores, labels)
    if scores.ndim != 2 or scores.shape[0] != len(labels):
        raise ShapeError(f"score matrix {scores.shape} does not match {len(labels)} labels")
    present = np.unique(labels)
    if len(present) < 2:
        raise MetricError("multiclass AUC needs at least two classes present")
    aucs = [_binary_auc(scores[:, c], (labels == c).astype(int)) for c in present]
    return float(np.mean(aucs))


@dataclass
class EvalReport:
    """Evaluation summary for one checkpoint on one manifest."""

    accuracy: float
    macro_f1: float
    auc: float
    per_class_precision: list[float]
    per_class_recall: list[float]
    confusion: list[list[int]]
    num_samples: int
    dataset_id: str = ""
    config_hash: str = ""
    extra: dict = field(default_factory=dict)

    def to_json(self, indent: int = 2) -> str:
        payload = {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "auc": self.auc,
            "per_class_precision": self.per_class_precision,
            "per_class_recall": self.per_class_recall,
            "confusion": self.confusion,
            "num_samples": self.num_samples,
            "dataset_id": self.dataset_id,
            "config_hash": self.config_hash,
        }
        payload.update(self.extra)
        return json.dumps(payload, indent=indent, sort_keys=True)


def build_report(
    preds,
    labels,
    scores,
    num_classes: int,
    dataset_id: str = "",
    config_hash: str = "",
) -> EvalReport:
    """Assemble the full report; binary tasks use positive-class scores for AUC."""
    scores = np.asarray(scores, dtype=np.float64)
    if num_classes == 2 and scores.ndim == 2:
        auc_val = roc_auc(scores[:, 1], labels)
    else:
        auc_val = roc_auc(scores, labels)
    precision, recall = precision_recall(preds, labels, num_classes)
    return EvalReport(
        accuracy=accuracy(preds, labels),
        macro_f1=macro_f1(preds, labels, num_classes),
        auc=auc_val,
        per_class_precision=[float(v) for v in precision],
        per_class_recall=[float(v) for v in recall],
        confusion=confusion_matrix(preds, labels, num_classes).tolist(),
        num_samples=len(np.asarray(labels)),
        dataset_id=dataset_id,
        config_hash=config_hash,
    )
