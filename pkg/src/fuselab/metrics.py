"""Classification metrics: confusion matrix, accuracy, per-class / macro /
weighted F1. Zero-denominator precision/recall/F1 are defined as 0 so macro F1
stays defined when a class is absent."""

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import LABEL_NAMES, N_CLASSES
from .errors import InputError


def confusion(preds: Sequence[int], labels: Sequence[int]) -> np.ndarray:
    """3x3 count matrix; entry (i, j) = samples of true class i predicted j."""
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if preds.shape != labels.shape:
        raise InputError(f"preds length {preds.shape[0]} != labels length {labels.shape[0]}")
    if preds.shape[0] == 0:
        raise InputError("confusion: empty input")
    for name, arr in (("preds", preds), ("labels", labels)):
        if arr.min() < 0 or arr.max() >= N_CLASSES:
            raise InputError(f"{name} contain classes outside 0..{N_CLASSES - 1}")
    cm = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


@dataclass
class MetricsReport:
    accuracy: float
    precision: np.ndarray  # (3,)
    recall: np.ndarray     # (3,)
    f1: np.ndarray         # (3,)
    macro_f1: float
    weighted_f1: float
    confusion: np.ndarray  # (3, 3) int64
    support: np.ndarray    # (3,) true-label counts

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
            "per_class": {
                name: {
                    "precision": float(self.precision[i]),
                    "recall": float(self.recall[i]),
                    "f1": float(self.f1[i]),
                    "support": int(self.support[i]),
                }
                for i, name in enumerate(LABEL_NAMES)
            },
            "confusion": self.confusion.tolist(),
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    def value(self, metric: str) -> float:
        """Look up a selection metric by its config name."""
        try:
            return {"accuracy": self.accuracy,
                    "macro_f1": self.macro_f1,
                    "weighted_f1": self.weighted_f1}[metric]
        except KeyError:
            raise InputError(f"unknown metric {metric!r}") from None


def report(cm: np.ndarray) -> MetricsReport:
    cm = np.asarray(cm, dtype=np.int64)
    if cm.shape != (N_CLASSES, N_CLASSES):
        raise InputError(f"confusion matrix must be {N_CLASSES}x{N_CLASSES}, got {cm.shape}")
    total = int(cm.sum())
    if total <= 0:
        raise InputError("confusion matrix is empty")
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    diag = np.diag(cm).astype(np.float64)
    precision = np.where(predicted > 0, diag / np.maximum(predicted, 1), 0.0)
    recall = np.where(support > 0, diag / np.maximum(support, 1), 0.0)
    pr = precision + recall
    f1 = np.where(pr > 0, 2.0 * precision * recall / np.where(pr > 0, pr, 1.0), 0.0)
    return MetricsReport(
        accuracy=float(diag.sum() / total),
        precision=precision,
        recall=recall,
        f1=f1,
        macro_f1=float(f1.mean()),
        weighted_f1=float((f1 * support).sum() / total),
        confusion=cm,
        support=support,
    )


def evaluate(preds: Sequence[int], labels: Sequence[int]) -> MetricsReport:
    return report(confusion(preds, labels))


def breakdown_series(history) -> list:
    """Per-epoch per-class F1 rows: (epoch, f1_negative, f1_neutral, f1_positive)."""
    if not history.epochs:
        raise InputError("breakdown_series: empty history")
    rows = []
    for rec in history.epochs:
        f1 = rec.val_report.f1
        rows.append((rec.epoch, float(f1[0]), float(f1[1]), float(f1[2])))
    return rows
