"""Random forest of weighted-Gini classification trees."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..schema import canonical_schema
from . import _kernels as K
from .tree import Tree, _Prepared

N_CLASSES = 3


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 300
    max_depth: int = 12
    min_leaf: int = 20
    class_weights: tuple[float, float, float] | None = None
    max_features: int | None = None  # default ceil(sqrt(d))
    bootstrap: bool = True
    rng_seed: int = 0


@dataclass
class ForestModel:
    trees: list[Tree]
    class_weights: tuple[float, ...]
    n_features: int
    schema_hash: int
    n_classes: int = N_CLASSES

    kind = "forest"

    def iter_trees(self):
        for t in self.trees:
            yield 0, t


def fit_random_forest(X, labels, config: ForestConfig | None = None, schema_hash: int | None = None) -> ForestModel:
    """Bootstrap-aggregated Gini trees; class weights act as sample weights in both the
    impurity and the leaf class distributions."""
    cfg = config or ForestConfig()
    X = np.asarray(X, np.float64)
    y = np.asarray(labels, np.int64)
    if y.size and (y.min() < 0 or y.max() >= N_CLASSES):
        raise ValueError("labels must lie in {0, 1, 2}")
    n, d = X.shape
    cw = np.ones(N_CLASSES) if cfg.class_weights is None else np.asarray(cfg.class_weights, np.float64)
    w = cw[y]
    max_features = cfg.max_features or max(1, math.ceil(math.sqrt(d)))
    max_features = min(max_features, d)
    prep = _Prepared(X)
    ss = np.random.SeedSequence(cfg.rng_seed)
    trees = []
    for child in ss.spawn(cfg.n_trees):
        rng = np.random.default_rng(child)
        rows = np.sort(rng.integers(0, n, size=n)) if cfg.bootstrap else np.arange(n)
        node_seed = int(rng.integers(0, 2**31 - 1))
        f, t, l, r, c, v, m = K.grow_gini(
            prep.Xt,
            prep.Xb,
            prep.binner.edges,
            prep.binner.n_edges,
            y,
            w,
            rows.astype(np.int64),
            N_CLASSES,
            max_features,
            cfg.min_leaf,
            cfg.max_depth,
            node_seed,
        )
        trees.append(Tree(f, t, l, r, c, v))
    return ForestModel(
        trees,
        tuple(float(x) for x in cw),
        d,
        canonical_schema().schema_hash if schema_hash is None else schema_hash,
    )
