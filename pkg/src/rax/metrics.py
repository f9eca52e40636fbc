"""Confusion-matrix metrics and the pairwise-complete correlation matrix."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .schema import FeatureKind
from .table import EventTable

N_CLASSES = 3


class MetricsError(ValueError):
    pass


def confusion_matrix(y_true, y_pred, n_classes: int = N_CLASSES) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    t = np.asarray(y_true, np.int64)
    p = np.asarray(y_pred, np.int64)
    if t.shape != p.shape:
        raise MetricsError(f"length mismatch: {len(t)} true vs {len(p)} predicted labels")
    if t.size == 0:
        raise MetricsError("cannot evaluate an empty label sequence")
    if t.min() < 0 or p.min() < 0 or t.max() >= n_classes or p.max() >= n_classes:
        raise MetricsError(f"labels must lie in [0, {n_classes})")
    return np.bincount(t * n_classes + p, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def _safe_div(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    out = np.zeros_like(a)
    np.divide(a, b, out=out, where=b != 0)
    return out


@dataclass
class Metrics:
    accuracy: float
    kappa: float
    macro_f1: float
    per_class_recall: list[float]
    per_class_precision: list[float]
    per_class_f1: list[float]
    confusion: np.ndarray

    @property
    def recall_fatal(self) -> float:
        return self.per_class_recall[2]

    def to_dict(self, model: str | None = None, strategy: str | None = None) -> dict:
        return {
            "model": model,
            "strategy": strategy,
            "accuracy": self.accuracy,
            "kappa": self.kappa,
            "macro_f1": self.macro_f1,
            "recall_per_class": list(self.per_class_recall),
            "confusion": self.confusion.tolist(),
        }

    def to_json(self, model: str | None = None, strategy: str | None = None) -> str:
        return json.dumps(self.to_dict(model, strategy), indent=2)


def metrics_from_confusion(cm: np.ndarray) -> Metrics:
    cm = np.asarray(cm, np.int64)
    total = cm.sum()
    if total == 0:
        raise MetricsError("cannot evaluate an empty confusion matrix")
    diag = np.diag(cm).astype(np.float64)
    rows = cm.sum(axis=1).astype(np.float64)
    cols = cm.sum(axis=0).astype(np.float64)
    p_o = diag.sum() / total
    p_e = float((rows * cols).sum()) / float(total) ** 2
    kappa = 0.0 if p_e == 1.0 else (p_o - p_e) / (1.0 - p_e)
    recall = _safe_div(diag, rows)
    precision = _safe_div(diag, cols)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    return Metrics(
        accuracy=float(p_o),
        kappa=float(kappa),
        macro_f1=float(f1.mean()),
        per_class_recall=recall.tolist(),
        per_class_precision=precision.tolist(),
        per_class_f1=f1.tolist(),
        confusion=cm,
    )


def evaluate(y_true, y_pred) -> Metrics:
    """Accuracy, Cohen's kappa, macro-F1 over all three classes and per-class recall.

    kappa is 0 when expected agreement is 1; precision, recall and F1 are 0 whenever their
    denominators vanish, so empty classes still count toward the macro average.
    """
    return metrics_from_confusion(confusion_matrix(y_true, y_pred))


@dataclass
class CorrelationMatrix:
    names: list[str]
    values: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["feature"] + self.names)
        for n, row in zip(self.names, self.values):
            w.writerow([n] + [repr(float(v)) for v in row])
        return buf.getvalue()


def correlation_matrix(rows, features: Sequence[str] | None = None) -> CorrelationMatrix:
    """Pearson correlations over pairwise-complete rows. Zero-variance pairs give 0 off the
    diagonal; the diagonal is always 1. ``rows`` is an EventTable (masked entries are
    missing) or a matrix with NaN for missing, in which case ``features`` names its columns."""
    if isinstance(rows, EventTable):
        names = list(features) if features is not None else [rows.schema.names[i] for i in rows.schema.indices(FeatureKind.Numeric)]
        if not names:
            raise MetricsError("correlation matrix needs at least one feature")
        idx = [rows.schema.index(n) for n in names]
        X = rows.model_matrix()[:, idx]
    else:
        X = np.atleast_2d(np.asarray(rows, np.float64))
        names = list(features) if features is not None else [f"f{i}" for i in range(X.shape[1])]
        if not names:
            raise MetricsError("correlation matrix needs at least one feature")
    if X.shape[0] < 2:
        raise MetricsError("correlation matrix needs at least 2 rows")
    d = X.shape[1]
    R = np.eye(d)
    ok = ~np.isnan(X)
    for i in range(d):
        for j in range(i + 1, d):
            both = ok[:, i] & ok[:, j]
            a, b = X[both, i], X[both, j]
            r = 0.0
            if len(a) >= 2:
                da, db = a - a.mean(), b - b.mean()
                den = np.sqrt((da * da).sum() * (db * db).sum())
                if den > 0:
                    r = float(np.clip((da * db).sum() / den, -1.0, 1.0))
            R[i, j] = R[j, i] = r
    return CorrelationMatrix(names, R)
