"""Decision-tree node tables, quantile binning and the second-order tree learner."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K


@dataclass(frozen=True)
class Tree:
    """Flat node table. ``feature == -1`` marks a leaf; ``value`` is (n_nodes, n_out)."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    cover: np.ndarray
    value: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "feature", np.ascontiguousarray(self.feature, np.int32))
        object.__setattr__(self, "threshold", np.ascontiguousarray(self.threshold, np.float64))
        object.__setattr__(self, "left", np.ascontiguousarray(self.left, np.int32))
        object.__setattr__(self, "right", np.ascontiguousarray(self.right, np.int32))
        object.__setattr__(self, "cover", np.ascontiguousarray(self.cover, np.float64))
        v = np.asarray(self.value, np.float64)
        object.__setattr__(self, "value", np.ascontiguousarray(v.reshape(len(self.feature), -1)))

    @classmethod
    def leaf(cls, value, cover: float = 1.0) -> Tree:
        return cls([-1], [0.0], [-1], [-1], [cover], np.atleast_2d(np.asarray(value, float)))

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_outputs(self) -> int:
        return self.value.shape[1]

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    def depth(self) -> int:
        best, stack = 0, [(0, 0)]
        while stack:
            node, dep = stack.pop()
            best = max(best, dep)
            if not self.is_leaf(node):
                stack += [(self.left[node], dep + 1), (self.right[node], dep + 1)]
        return best

    def used_features(self) -> set[int]:
        return {int(f) for f in self.feature if f >= 0}

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(X), np.float64)
        return K.apply_tree(self.feature, self.threshold, self.left, self.right, X)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def check(self, n_features: int | None = None, rtol: float = 1e-9) -> None:
        """Validate structural invariants; raises ValueError."""
        for node in range(self.n_nodes):
            if self.is_leaf(node):
                continue
            l, r = self.left[node], self.right[node]
            if not (0 <= l < self.n_nodes and 0 <= r < self.n_nodes):
                raise ValueError(f"node {node} has invalid children")
            if n_features is not None and self.feature[node] >= n_features:
                raise ValueError(f"node {node} splits on feature {self.feature[node]} >= {n_features}")
            c, s = self.cover[node], self.cover[l] + self.cover[r]
            if abs(c - s) > rtol * max(abs(c), 1e-300):
                raise ValueError(f"node {node}: cover {c} != children sum {s}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tree):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, a), getattr(other, a))
            for a in ("feature", "threshold", "left", "right", "cover", "value")
        )

    __hash__ = None


@dataclass(frozen=True)
class Binner:
    """Per-feature split candidates from (at most) 256 quantile bins."""

    edges: np.ndarray  # (d, MAX_BINS - 1), padded with +inf
    n_edges: np.ndarray  # (d,)

    @classmethod
    def fit(cls, X: np.ndarray, max_bins: int = K.MAX_BINS) -> Binner:
        X = np.asarray(X, np.float64)
        n, d = X.shape
        edges = np.full((d, K.MAX_BINS - 1), np.inf)
        counts = np.zeros(d, np.int64)
        for j in range(d):
            col = X[:, j]
            v = np.sort(col[~np.isnan(col)])
            if len(v) == 0:
                continue
            uniq = np.unique(v)
            if len(uniq) <= max_bins:
                lo, hi = uniq[:-1], uniq[1:]
            else:
                cut = np.unique((np.arange(1, max_bins) * len(v)) // max_bins)
                lo, hi = v[cut - 1], v[cut]
                keep = lo < hi
                lo, hi = lo[keep], hi[keep]
            e = 0.5 * (lo + hi)
            e = np.where(e > lo, e, hi)
            e = np.unique(e)[: K.MAX_BINS - 1]
            edges[j, : len(e)] = e
            counts[j] = len(e)
        return cls(edges, counts)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return K.bin_matrix(np.ascontiguousarray(X, np.float64), self.edges, self.n_edges)


@dataclass(frozen=True)
class TreeConfig:
    max_depth: int = 8
    min_leaf_weight: float = 1.0
    col_subsample: float = 1.0
    rng_seed: int = 0
    reg_lambda: float = 1.0


class _Prepared:
    """Column-major features plus bin codes, computed once per training matrix."""

    def __init__(self, X: np.ndarray, binner: Binner | None = None):
        X = np.asarray(X, np.float64)
        self.n, self.d = X.shape
        self.binner = binner or Binner.fit(X)
        self.Xt = np.ascontiguousarray(X.T)
        self.Xb = self.binner.transform(X)
        self.Xb_rows = np.ascontiguousarray(self.Xb.T)


def sample_columns(d: int, frac: float, rng: np.random.Generator) -> np.ndarray:
    k = max(1, int(np.ceil(frac * d))) if frac < 1 else d
    if k >= d:
        return np.arange(d, dtype=np.int64)
    return np.sort(rng.choice(d, size=k, replace=False)).astype(np.int64)


def _grow(prep: _Prepared, grads, hesss, rows, feats, cfg: TreeConfig) -> Tree:
    f, t, l, r, c, v, n = K.grow_gh(
        prep.Xt,
        prep.Xb_rows,
        prep.binner.edges,
        prep.binner.n_edges,
        np.ascontiguousarray(grads, np.float64),
        np.ascontiguousarray(hesss, np.float64),
        np.ascontiguousarray(rows, np.int64),
        np.ascontiguousarray(feats, np.int64),
        cfg.max_depth,
        cfg.min_leaf_weight,
        cfg.reg_lambda,
    )
    return Tree(f, t, l, r, c, v)


def fit_tree(X, grads, hesss, config: TreeConfig | None = None, rows=None) -> Tree:
    """Fit one regression tree to per-row gradients/hessians.

    Splits maximise 0.5 * [G_L^2/(H_L+l) + G_R^2/(H_R+l) - G^2/(H+l)] and are kept only
    when the gain is positive and both children reach ``min_leaf_weight`` hessian mass.
    Leaves hold -G/(H+l).
    """
    cfg = config or TreeConfig()
    X = np.atleast_2d(np.asarray(X, np.float64))
    if X.shape[0] == 0:
        return Tree.leaf([0.0], 0.0)
    prep = _Prepared(X)
    rng = np.random.default_rng(cfg.rng_seed)
    feats = sample_columns(prep.d, cfg.col_subsample, rng)
    rows = np.arange(prep.n) if rows is None else np.asarray(rows)
    return _grow(prep, grads, hesss, rows, feats, cfg)
