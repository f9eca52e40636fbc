"""Multiclass second-order gradient boosting (one tree per class per round)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..schema import canonical_schema
from .objectives import Objective, softmax
from .tree import Tree, TreeConfig, _grow, _Prepared, sample_columns

log = logging.getLogger(__name__)

N_CLASSES = 3
PRIOR_FLOOR = 1e-12


@dataclass(frozen=True)
class BoostingConfig:
    n_rounds: int = 400
    max_depth: int = 8
    learning_rate: float = 0.05
    row_subsample: float = 0.8
    col_subsample: float = 0.8
    reg_lambda: float = 1.0
    min_leaf_weight: float = 1.0
    rng_seed: int = 0


@dataclass
class BoostedModel:
    rounds: list[list[Tree]]  # rounds[r][c] is class c's tree in round r
    learning_rate: float
    base_score: np.ndarray
    reg_lambda: float
    n_features: int
    schema_hash: int
    n_classes: int = N_CLASSES
    train_loss: list[float] = field(default_factory=list)

    kind = "boosted"

    @property
    def n_rounds(self) -> int:
        return len(self.rounds)

    def iter_trees(self):
        """(class index, tree) in round-major order."""
        for r in self.rounds:
            yield from enumerate(r)

    def margin(self, X: np.ndarray) -> np.ndarray:
        from .predict import raw_margin

        return raw_margin(self, X)


def class_prior(labels: np.ndarray, n_classes: int = N_CLASSES) -> np.ndarray:
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
    return counts / counts.sum()


def fit_gradient_boosting(
    X,
    labels,
    objective: Objective | None = None,
    config: BoostingConfig | None = None,
    schema_hash: int | None = None,
    track_loss: bool = False,
) -> BoostedModel:
    """Fit ``n_rounds`` rounds; each round grows one tree per class on a fresh
    row sample and column sample, then moves every row's margin by eta * leaf value.

    With ``track_loss`` the full-training-set objective is recorded before the first
    round and after every round (``model.train_loss``).
    """
    cfg = config or BoostingConfig()
    objective = objective or Objective()
    X = np.asarray(X, np.float64)
    y = np.asarray(labels, np.int64)
    if y.size and (y.min() < 0 or y.max() >= N_CLASSES):
        raise ValueError("labels must lie in {0, 1, 2}")
    n, d = X.shape
    prior = np.maximum(class_prior(y), PRIOR_FLOOR) if n else np.full(N_CLASSES, 1 / N_CLASSES)
    base = np.log(prior)
    model = BoostedModel(
        [],
        cfg.learning_rate,
        base,
        cfg.reg_lambda,
        d,
        canonical_schema().schema_hash if schema_hash is None else schema_hash,
    )
    if cfg.n_rounds == 0 or n == 0:
        return model

    prep = _Prepared(X)
    rng = np.random.default_rng(cfg.rng_seed)
    tcfg = TreeConfig(cfg.max_depth, cfg.min_leaf_weight, cfg.col_subsample, cfg.rng_seed, cfg.reg_lambda)
    margins = np.tile(base, (n, 1))
    if track_loss:
        model.train_loss.append(float(objective.loss(margins, y).sum()))
    n_rows = max(1, int(round(cfg.row_subsample * n))) if cfg.row_subsample < 1 else n
    for r in range(cfg.n_rounds):
        grad, hess = objective.gradients(margins, y)
        rows = np.sort(rng.choice(n, size=n_rows, replace=False)) if n_rows < n else np.arange(n)
        trees = []
        for c in range(N_CLASSES):
            feats = sample_columns(d, cfg.col_subsample, rng)
            tree = _grow(prep, grad[:, c], hess[:, c], rows, feats, tcfg)
            trees.append(tree)
        for c, tree in enumerate(trees):
            margins[:, c] += cfg.learning_rate * tree.predict(X)[:, 0]
        model.rounds.append(trees)
        if track_loss:
            model.train_loss.append(float(objective.loss(margins, y).sum()))
        if (r + 1) % 50 == 0:
            log.debug("round %d/%d", r + 1, cfg.n_rounds)
    return model


def prior_proba(model: BoostedModel) -> np.ndarray:
    return softmax(model.base_score)
