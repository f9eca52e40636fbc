"""Batch scoring for every model kind."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..table import EventTable
from . import _kernels as K
from .objectives import softmax


class SchemaMismatchError(ValueError):
    def __init__(self, model_hash: int, rows_hash: int):
        super().__init__(f"model schema {model_hash:016x} does not match rows schema {rows_hash:016x}")
        self.model_hash = model_hash
        self.rows_hash = rows_hash


def _matrix(model, rows) -> np.ndarray:
    if isinstance(rows, EventTable):
        if rows.schema_hash != model.schema_hash:
            raise SchemaMismatchError(model.schema_hash, rows.schema_hash)
        X = rows.model_matrix()
    else:
        X = np.atleast_2d(np.asarray(rows, np.float64))
    if X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {X.shape[1]}")
    return np.ascontiguousarray(X)


@dataclass(frozen=True)
class Packed:
    """Trees laid out as complete binary trees of a common depth, with thresholds
    replaced by their rank among the model's sorted thresholds for that feature."""

    feature: np.ndarray  # (T, 2^depth - 1) int32
    rank: np.ndarray  # (T, 2^depth - 1) int32
    value: np.ndarray  # (T, 2^depth, k)
    out_col: np.ndarray  # (T,)
    depth: int
    thresholds: list  # per feature: sorted unique finite thresholds

    def encode(self, X: np.ndarray) -> np.ndarray:
        n, d = X.shape
        codes = np.zeros((n, d), np.uint16)
        for f in range(d):
            u = self.thresholds[f]
            if len(u):
                col = X[:, f]
                c = np.searchsorted(u, col, side="right")
                c[np.isnan(col)] = 0
                codes[:, f] = c
        return codes


_PASS = np.iinfo(np.int32).max


def pack_trees(trees, out_cols, n_features: int) -> Packed:
    trees = list(trees)
    depth = max((t.depth() for t in trees), default=0)
    k = trees[0].n_outputs if trees else 1
    n_int = max(2**depth - 1, 1)
    feat = np.zeros((len(trees), n_int), np.int32)
    thr = np.full((len(trees), n_int), np.inf)
    val = np.zeros((len(trees), 2**depth, k))
    for i, t in enumerate(trees):
        K.to_perfect(t.feature, t.threshold, t.left, t.right, t.value, depth, feat[i], thr[i], val[i])
    thresholds = []
    rank = np.full(feat.shape, _PASS, np.int32)
    finite = np.isfinite(thr)
    for f in range(n_features):
        sel = finite & (feat == f)
        u = np.unique(thr[sel])
        if len(u) >= np.iinfo(np.uint16).max:
            raise ValueError(f"feature {f} has too many distinct thresholds to encode")
        thresholds.append(u)
        rank[sel] = np.searchsorted(u, thr[sel])
    return Packed(feat, rank, val, np.asarray(out_cols, np.int64), depth, thresholds)


def _packed(model) -> Packed:
    cache = model.__dict__.get("_packed")
    n = sum(1 for _ in model.iter_trees())
    if cache is None or cache[0] != n:
        cols = [c for c, _ in model.iter_trees()] if model.kind == "boosted" else [0] * n
        cache = (n, pack_trees((t for _, t in model.iter_trees()), cols, model.n_features))
        model.__dict__["_packed"] = cache
    return cache[1]


def _tree_sums(model, X: np.ndarray, n_cols: int) -> np.ndarray:
    p = _packed(model)
    if len(p.out_col) == 0:
        return np.zeros((X.shape[0], n_cols))
    return K.perfect_sum(p.encode(X), p.feature, p.rank, p.value, p.out_col, n_cols, p.depth)


def raw_margin(model, rows) -> np.ndarray:
    """Per-class margin: logits for boosted/linear models, mean class distribution for forests."""
    X = _matrix(model, rows)
    if model.kind == "boosted":
        return model.base_score + model.learning_rate * _tree_sums(model, X, model.n_classes)
    if model.kind == "forest":
        return _tree_sums(model, X, model.n_classes) / max(len(model.trees), 1)
    if model.kind == "linear":
        return model.decision_function(X)
    raise TypeError(f"unknown model kind {model.kind!r}")


def predict_proba(model, rows) -> np.ndarray:
    m = raw_margin(model, rows)
    if model.kind == "forest":
        return m / m.sum(axis=1, keepdims=True)
    return softmax(m)


def predict_class(model, rows) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class index
    return np.argmax(predict_proba(model, rows), axis=1).astype(np.int64)


@dataclass(frozen=True)
class ScoreStats:
    rows: int
    seconds: float

    @property
    def rows_per_second(self) -> float:
        return self.rows / self.seconds if self.seconds > 0 else float("inf")

    def to_dict(self) -> dict:
        return {"rows": self.rows, "seconds": self.seconds, "rows_per_second": self.rows_per_second}


def score_batch(model, rows, warmup: bool = True):
    """Predicted labels plus measured throughput."""
    X = _matrix(model, rows)
    if warmup and len(X):
        predict_class(model, X[:1])
    t0 = time.perf_counter()
    labels = predict_class(model, X)
    dt = time.perf_counter() - t0
    return labels, ScoreStats(len(X), dt)
