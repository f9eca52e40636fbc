"""Test helpers: random trees, small tables and a hand-coded metric oracle."""

from __future__ import annotations

from datetime import datetime

import numpy as np

from rax.models import Tree
from rax.schema import FeatureKind, canonical_schema
from rax.table import EventTable, to_epoch

# acceptance results keyed "A1".."A11", printed by the conftest terminal-summary hook
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def random_tree(rng: np.random.Generator, d: int, max_depth: int, n_outputs: int = 1,
                p_split: float = 0.8, grid: bool = False) -> Tree:
    """Random node table with consistent covers. ``grid`` draws thresholds from {0.5, 1.5, ...}
    so that integer-valued inputs hit both sides often."""
    feature, threshold, left, right, value = [], [], [], [], []

    def new():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(rng.normal(size=n_outputs))
        return len(feature) - 1

    def grow(node, depth):
        if depth >= max_depth or rng.random() > p_split:
            return
        feature[node] = int(rng.integers(0, d))
        threshold[node] = float(rng.integers(0, 3) + 0.5) if grid else float(rng.normal())
        l, r = new(), new()
        left[node], right[node] = l, r
        grow(l, depth + 1)
        grow(r, depth + 1)

    grow(new(), 0)
    n = len(feature)
    cover = np.zeros(n)

    def fill(node):
        if feature[node] < 0:
            cover[node] = rng.uniform(0.5, 10.0)
        else:
            fill(left[node])
            fill(right[node])
            cover[node] = cover[left[node]] + cover[right[node]]
        return cover[node]

    fill(0)
    return Tree(feature, threshold, left, right, cover, np.array(value))


def random_x(rng: np.random.Generator, d: int, grid: bool = False, p_nan: float = 0.0) -> np.ndarray:
    x = rng.integers(0, 4, d).astype(float) if grid else rng.normal(size=d)
    x[rng.random(d) < p_nan] = np.nan
    return x


def month_table(year: int, month: int, n: int, first_id: int = 1, seed: int = 0) -> EventTable:
    """``n`` schema-valid rows spread over one month with random feature values."""
    rng = np.random.default_rng(seed)
    schema = canonical_schema()
    d = len(schema)
    lo = to_epoch(datetime(year, month, 1))
    hi = to_epoch(datetime(year + month // 12, month % 12 + 1, 1))
    ts = np.sort(rng.integers(lo, hi, n))
    V = rng.random((n, d))
    M = rng.random((n, d)) < 0.05
    for j, f in enumerate(schema.features):
        if f.kind is FeatureKind.Binary:
            V[:, j] = V[:, j] < 0.5
            M[:, j] = False
        elif f.kind is FeatureKind.CategoricalCode:
            V[:, j] = np.floor(V[:, j] * 24)
    V[M] = -1.0
    return EventTable(V, M, np.arange(first_id, first_id + n), ts, rng.integers(0, 3, n), None, schema)


def naive_metrics(y_true, y_pred, k: int = 3) -> dict:
    """Straight-line metric definitions with explicit loops, no numpy reductions."""
    n = len(y_true)
    cm = [[0] * k for _ in range(k)]
    for t, p in zip(y_true, y_pred):
        cm[int(t)][int(p)] += 1
    correct = sum(cm[i][i] for i in range(k))
    p_o = correct / n
    p_e = sum(sum(cm[i]) * sum(cm[r][i] for r in range(k)) for i in range(k)) / (n * n)
    kappa = 0.0 if p_e == 1 else (p_o - p_e) / (1 - p_e)
    recall, precision, f1 = [], [], []
    for c in range(k):
        tp = cm[c][c]
        support = sum(cm[c])
        predicted = sum(cm[r][c] for r in range(k))
        rc = tp / support if support else 0.0
        pc = tp / predicted if predicted else 0.0
        recall.append(rc)
        precision.append(pc)
        f1.append(2 * pc * rc / (pc + rc) if pc + rc else 0.0)
    return {
        "confusion": cm,
        "accuracy": p_o,
        "kappa": kappa,
        "recall": recall,
        "precision": precision,
        "macro_f1": sum(f1) / k,
    }
