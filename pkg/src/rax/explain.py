"""Exact path-dependent TreeSHAP for trees and ensembles, a brute-force Shapley oracle and
global mean-|SHAP| rankings.

Attributions live on the model's margin scale: logits for boosted models and class
probabilities for forests.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from . import _shap_kernels as SK
from .models.predict import SchemaMismatchError, _matrix, raw_margin
from .models.tree import Tree
from .schema import canonical_schema

BRUTE_FORCE_MAX_FEATURES = 20
MAX_TREE_DEPTH = 128


class ShapError(ValueError):
    pass


def _check_tree(tree: Tree) -> None:
    if not tree.cover[0] > 0:
        raise ShapError("tree root has zero cover (untrained tree)")
    if tree.depth() > MAX_TREE_DEPTH:
        raise ShapError(f"tree depth {tree.depth()} exceeds {MAX_TREE_DEPTH}")


def _as_row(x) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x, np.float64).ravel())


def _squeeze(phi: np.ndarray, base: np.ndarray):
    if phi.shape[1] == 1:
        return phi[:, 0], float(base[0])
    return phi, base


def tree_base(tree: Tree) -> np.ndarray:
    """Cover-weighted mean leaf value, shape (n_outputs,)."""
    _check_tree(tree)
    out = np.zeros(tree.n_outputs)
    SK.expected_value(0, tree.feature, tree.left, tree.right, tree.cover, tree.value, out)
    return out


def tree_shap(tree: Tree, x, n_features: int | None = None):
    """Return (phi, base). For single-output trees phi has shape (d,) and base is a float;
    otherwise phi is (d, n_outputs) and base is (n_outputs,)."""
    _check_tree(tree)
    x = _as_row(x)
    d = len(x) if n_features is None else n_features
    phi = np.zeros((d, tree.n_outputs))
    base = tree_base(tree)
    if not tree.is_leaf(0):
        SK.tree_phi(tree.feature, tree.threshold, tree.left, tree.right, tree.cover, tree.value,
                    x, phi, 0, 1.0, max(tree.depth(), 1))
    return _squeeze(phi, base)


def _subset_value(tree: Tree, x: np.ndarray, S: frozenset, node: int = 0) -> np.ndarray:
    if tree.is_leaf(node):
        return tree.value[node]
    f = tree.feature[node]
    l, r = tree.left[node], tree.right[node]
    if f in S:
        nxt = r if x[f] >= tree.threshold[node] else l
        return _subset_value(tree, x, S, nxt)
    c = tree.cover[node]
    return (tree.cover[l] * _subset_value(tree, x, S, l) + tree.cover[r] * _subset_value(tree, x, S, r)) / c


def brute_force_shap(tree: Tree, x, n_features: int | None = None):
    """Shapley values by enumerating every feature subset; v(S) fixes the features in S to x
    and marginalises the rest by cover proportions. Cost is O(2^d), so d <= 20."""
    _check_tree(tree)
    x = _as_row(x)
    d = len(x) if n_features is None else n_features
    if d > BRUTE_FORCE_MAX_FEATURES:
        raise ShapError(f"brute-force SHAP refuses d={d} > {BRUTE_FORCE_MAX_FEATURES}")
    memo: dict[frozenset, np.ndarray] = {}

    def v(S):
        if S not in memo:
            memo[S] = _subset_value(tree, x, S)
        return memo[S]

    phi = np.zeros((d, tree.n_outputs))
    fact = [math.factorial(i) for i in range(d + 1)]
    for j in range(d):
        rest = [i for i in range(d) if i != j]
        for s in range(d):
            w = fact[s] * fact[d - 1 - s] / fact[d]
            for S in combinations(rest, s):
                S = frozenset(S)
                phi[j] += w * (v(S | {j}) - v(S))
    return _squeeze(phi, v(frozenset()))


@dataclass
class ShapAttribution:
    """Per-class attributions for one event; phi is (d, n_classes), base is (n_classes,)."""

    collision_id: int
    phi: np.ndarray
    base: np.ndarray
    scale: str

    def margin(self) -> np.ndarray:
        return self.phi.sum(axis=0) + self.base

    def top_k(self, k: int = 3, names: Sequence[str] | None = None, cls: int | None = None) -> list[str]:
        """Features with the largest |phi| (class ``cls``, or mean over classes)."""
        names = names or canonical_schema().names
        mag = np.abs(self.phi[:, cls]) if cls is not None else np.abs(self.phi).mean(axis=1)
        order = sorted(range(len(mag)), key=lambda j: (-mag[j], names[j]))
        return [names[j] for j in order[:k]]

    def to_dict(self, names: Sequence[str] | None = None) -> dict:
        names = names or canonical_schema().names
        return {
            "collision_id": int(self.collision_id),
            "scale": self.scale,
            "base_value": self.base.tolist(),
            "phi": {n: self.phi[j].tolist() for j, n in enumerate(names)},
        }


def _flatten(model):
    trees, cols, scales = [], [], []
    if model.kind == "boosted":
        for c, t in model.iter_trees():
            trees.append(t)
            cols.append(c)
            scales.append(model.learning_rate)
    elif model.kind == "forest":
        for t in model.trees:
            trees.append(t)
            cols.append(0)
            scales.append(1.0 / len(model.trees))
    else:
        raise ShapError(f"TreeSHAP needs a tree ensemble, got a {model.kind} model")
    return trees, np.asarray(cols, np.int64), np.asarray(scales)


def ensemble_base(model) -> np.ndarray:
    trees, cols, scales = _flatten(model)
    k = model.n_classes
    base = np.asarray(model.base_score, float).copy() if model.kind == "boosted" else np.zeros(k)
    for t, c, s in zip(trees, cols, scales):
        b = tree_base(t)
        base[c : c + len(b)] += s * b
    return base


class _Packed:
    def __init__(self, model):
        trees, self.cols, self.scales = _flatten(model)
        sizes = [t.n_nodes for t in trees]
        self.off = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        k = trees[0].n_outputs if trees else 1
        cat = lambda name: np.concatenate([getattr(t, name) for t in trees]) if trees else np.zeros(0)
        self.feat = cat("feature").astype(np.int32) if trees else np.zeros(0, np.int32)
        self.thr = cat("threshold")
        self.left = cat("left").astype(np.int32) if trees else np.zeros(0, np.int32)
        self.right = cat("right").astype(np.int32) if trees else np.zeros(0, np.int32)
        self.cover = cat("cover")
        self.value = np.concatenate([t.value for t in trees]) if trees else np.zeros((0, k))
        self.max_depth = max([t.depth() for t in trees] + [1])
        for t in trees:
            _check_tree(t)


def ensemble_phi(model, X: np.ndarray) -> np.ndarray:
    """Attributions for every row of X, shape (n, d, n_classes)."""
    p = model.__dict__.get("_shap_packed")
    if p is None:
        p = _Packed(model)
        model.__dict__["_shap_packed"] = p
    X = np.ascontiguousarray(X, np.float64)
    if not len(p.cols):
        return np.zeros((len(X), X.shape[1], model.n_classes))
    return SK.ensemble_phi(X, p.feat, p.thr, p.left, p.right, p.cover, p.value, p.off,
                           p.cols, p.scales, model.n_classes, p.max_depth)


def ensemble_shap(model, rows) -> list[ShapAttribution]:
    """Per-event attributions for an EventTable (or a raw matrix, ids 0..n-1).

    Boosted: phi_c = eta * sum of class-c tree attributions, base_c = base_score_c +
    eta * sum of tree bases. Forest: mean over trees of per-class attributions.
    """
    X = _matrix(model, rows)
    ids = getattr(rows, "collision_id", None)
    ids = np.arange(len(X)) if ids is None else ids
    phi = ensemble_phi(model, X)
    base = ensemble_base(model)
    scale = "logit" if model.kind == "boosted" else "probability"
    return [ShapAttribution(int(ids[i]), phi[i], base, scale) for i in range(len(X))]


def local_accuracy_error(model, rows, attributions: Sequence[ShapAttribution]) -> float:
    m = raw_margin(model, rows)
    got = np.stack([a.margin() for a in attributions])
    return float(np.abs(got - m).max()) if len(m) else 0.0


@dataclass
class GlobalImportance:
    ranking: list[tuple[str, float]]
    aggregate: str = "mean_over_classes"

    def names(self) -> list[str]:
        return [n for n, _ in self.ranking]

    def top(self, k: int) -> list[str]:
        return self.names()[:k]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["feature", "mean_abs_shap"])
        for n, v in self.ranking:
            w.writerow([n, repr(float(v))])
        return buf.getvalue()


def global_importance(
    attributions: Sequence[ShapAttribution] | np.ndarray,
    cls: int | None = None,
    names: Sequence[str] | None = None,
) -> GlobalImportance:
    """Mean |phi| per feature over events; for ``cls=None`` the per-class means are averaged
    with equal weight. Sorted descending, ties alphabetical."""
    if isinstance(attributions, np.ndarray):
        phi = attributions
    else:
        if not attributions:
            raise ShapError("global importance needs at least one attribution")
        phi = np.stack([a.phi for a in attributions])
    names = list(names or canonical_schema().names)
    a = np.abs(phi).mean(axis=0)
    imp = a[:, cls] if cls is not None else a.mean(axis=1)
    order = sorted(range(len(names)), key=lambda j: (-imp[j], names[j]))
    agg = f"class_{cls}" if cls is not None else "mean_over_classes"
    return GlobalImportance([(names[j], float(imp[j])) for j in order], agg)


def write_jsonl(attributions: Iterable[ShapAttribution], fh, names: Sequence[str] | None = None) -> None:
    for a in attributions:
        fh.write(json.dumps(a.to_dict(names)) + "\n")


__all__ = [
    "GlobalImportance",
    "SchemaMismatchError",
    "ShapAttribution",
    "ShapError",
    "brute_force_shap",
    "ensemble_base",
    "ensemble_phi",
    "ensemble_shap",
    "global_importance",
    "local_accuracy_error",
    "tree_base",
    "tree_shap",
    "write_jsonl",
]
