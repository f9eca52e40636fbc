"""Class-imbalance strategies: inverse-frequency weights, random oversampling and SMOTE."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .schema import FeatureKind, SeverityLabel
from .table import EventTable

N_CLASSES = 3
FATAL = int(SeverityLabel.Fatal)


class ImbalanceError(ValueError):
    pass


@dataclass(frozen=True)
class ImbalanceStrategy:
    """One of Baseline, Weighted, Oversample, Smote, Focal with its parameters."""

    kind: str = "Baseline"
    target_fatal_share: float = 0.05
    k_neighbors: int = 5
    gamma: float = 2.0

    KINDS = ("Baseline", "Weighted", "Oversample", "Smote", "Focal")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ImbalanceError(f"unknown strategy {self.kind!r}; expected one of {self.KINDS}")
        if not 0 < self.target_fatal_share < 0.5:
            raise ImbalanceError("target_fatal_share must lie in (0, 0.5)")
        if self.k_neighbors < 1:
            raise ImbalanceError("k_neighbors must be >= 1")
        if self.gamma < 0:
            raise ImbalanceError("gamma must be >= 0")

    @classmethod
    def baseline(cls):
        return cls("Baseline")

    @classmethod
    def weighted(cls):
        return cls("Weighted")

    @classmethod
    def oversample(cls, target_fatal_share: float = 0.05):
        return cls("Oversample", target_fatal_share=target_fatal_share)

    @classmethod
    def smote(cls, k_neighbors: int = 5, target_fatal_share: float = 0.05):
        return cls("Smote", target_fatal_share=target_fatal_share, k_neighbors=k_neighbors)

    @classmethod
    def focal(cls, gamma: float = 2.0):
        return cls("Focal", gamma=gamma)

    @property
    def label(self) -> str:
        """Display name used in ablation output."""
        return {"Smote": "SMOTE", "Focal": "FocalLoss"}.get(self.kind, self.kind)

    @classmethod
    def parse(cls, text: str) -> ImbalanceStrategy:
        key = text.strip().lower()
        table = {
            "baseline": cls.baseline,
            "weighted": cls.weighted,
            "oversample": cls.oversample,
            "smote": cls.smote,
            "focal": cls.focal,
            "focalloss": cls.focal,
        }
        if key not in table:
            raise ImbalanceError(f"unknown strategy {text!r}")
        return table[key]()


def compute_class_weights(class_counts) -> np.ndarray:
    """w_c = N / (K n_c), so that sum_c w_c n_c = N."""
    counts = np.asarray(class_counts, np.float64)
    if counts.shape != (N_CLASSES,):
        raise ImbalanceError(f"expected {N_CLASSES} class counts, got shape {counts.shape}")
    if np.any(counts < 1):
        raise ImbalanceError(
            f"every class needs at least one example to be weighted, got counts {counts.astype(int).tolist()}"
        )
    return counts.sum() / (N_CLASSES * counts)


def class_counts(labels) -> np.ndarray:
    return np.bincount(np.asarray(labels, np.int64), minlength=N_CLASSES)


def n_to_add(n_fatal: int, n_total: int, target: float) -> int:
    """Smallest a >= 0 with (n_fatal + a) / (n_total + a) >= target."""
    if n_total > 0 and n_fatal / n_total >= target:
        return 0
    a = max(0, math.ceil((target * n_total - n_fatal) / (1 - target)))
    # guard against rounding in the closed form
    while a > 0 and (n_fatal + a - 1) / (n_total + a - 1) >= target:
        a -= 1
    while (n_fatal + a) / (n_total + a) < target:
        a += 1
    return a


@dataclass
class AugmentationReport:
    strategy: str
    originals: list[int]
    added: list[int]
    achieved_fatal_share: float

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "originals_per_class": self.originals,
            "added_per_class": self.added,
            "achieved_fatal_share": self.achieved_fatal_share,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _by_collision_id(table: EventTable) -> EventTable:
    return table.take(np.argsort(table.collision_id, kind="stable"))


def _synthetic_ids(table: EventTable, count: int) -> np.ndarray:
    start = min(0, int(table.collision_id.min(initial=0)))
    return start - 1 - np.arange(count, dtype=np.int64)


def _append(table: EventTable, values, missing, src_idx, report_name: str) -> tuple[EventTable, AugmentationReport]:
    count = len(src_idx)
    extra = EventTable(
        values,
        missing,
        _synthetic_ids(table, count),
        table.timestamp[src_idx],
        np.full(count, FATAL, np.int8),
        [table.factors[i] for i in src_idx] if table.factors is not None else None,
        table.schema,
    )
    out = EventTable.concat([table, extra])
    originals = class_counts(table.label)
    added = np.array([0, 0, count])
    share = float((originals[FATAL] + count) / max(len(out), 1))
    return out, AugmentationReport(report_name, originals.tolist(), added.tolist(), share)


def random_oversample(table: EventTable, target_fatal_share: float, rng_seed: int = 0):
    """Append duplicates of Fatal rows (drawn with replacement) until the Fatal share first
    reaches ``target_fatal_share``. Rows are sorted by collision_id before sampling so the
    result does not depend on input order. Synthetic rows get negative collision ids."""
    table = _by_collision_id(table)
    fatal = np.flatnonzero(table.label == FATAL)
    if len(fatal) == 0:
        raise ImbalanceError("random_oversample needs at least one Fatal row")
    a = n_to_add(len(fatal), len(table), target_fatal_share)
    rng = np.random.default_rng(rng_seed)
    src = fatal[rng.integers(0, len(fatal), size=a)] if a else np.zeros(0, np.int64)
    return _append(table, table.values[src], table.missing[src], src, "Oversample")


def smote(table: EventTable, target_fatal_share: float, k_neighbors: int = 5, rng_seed: int = 0):
    """Synthesize Fatal rows by interpolating numeric features between a random Fatal seed
    and one of its k nearest Fatal neighbours in z-scored numeric space.

    Standardisation uses the means and scales of the whole input (training) table.
    Binary and categorical features, missing masks and factors are copied from the seed;
    numeric features missing on either endpoint keep the seed value.
    """
    table = _by_collision_id(table)
    fatal = np.flatnonzero(table.label == FATAL)
    if len(fatal) < 2:
        raise ImbalanceError(
            f"SMOTE needs at least 2 Fatal rows, found {len(fatal)}; use random_oversample instead"
        )
    a = n_to_add(len(fatal), len(table), target_fatal_share)
    num = np.array(table.schema.indices(FeatureKind.Numeric))
    X = table.model_matrix()[:, num]
    means = np.nan_to_num(np.nanmean(X, axis=0)) if len(X) else np.zeros(len(num))
    scales = np.nanstd(X, axis=0)
    scales = np.where(np.isfinite(scales) & (scales > 0), scales, 1.0)
    Z = np.nan_to_num((X[fatal] - means) / scales, nan=0.0)

    k = min(k_neighbors, len(fatal) - 1)
    _, nbr = cKDTree(Z).query(Z, k=k + 1)
    nbr = np.asarray(nbr).reshape(len(fatal), k + 1)
    # drop self; with duplicate points self may not be in column 0
    neigh = np.empty((len(fatal), k), np.int64)
    for i in range(len(fatal)):
        others = [j for j in nbr[i] if j != i][:k]
        neigh[i] = others

    rng = np.random.default_rng(rng_seed)
    seeds = rng.integers(0, len(fatal), size=a)
    picks = neigh[seeds, rng.integers(0, k, size=a)]
    u = rng.random(a)

    src = fatal[seeds]
    other = fatal[picks]
    values = table.values[src].copy()
    missing = table.missing[src].copy()
    vs, vo = table.values[src][:, num], table.values[other][:, num]
    ok = ~table.missing[src][:, num] & ~table.missing[other][:, num]
    interp = vs + u[:, None] * (vo - vs)
    values[:, num] = np.where(ok, interp, vs)
    return _append(table, values, missing, src, "SMOTE")


def apply_strategy(table: EventTable, strategy: ImbalanceStrategy, rng_seed: int = 0):
    """Resample the training table for Oversample/Smote; other strategies pass it through.
    Returns (table, report)."""
    if strategy.kind == "Oversample":
        return random_oversample(table, strategy.target_fatal_share, rng_seed)
    if strategy.kind == "Smote":
        return smote(table, strategy.target_fatal_share, strategy.k_neighbors, rng_seed)
    counts = class_counts(table.label)
    share = float(counts[FATAL] / max(len(table), 1))
    return table, AugmentationReport(strategy.label, counts.tolist(), [0, 0, 0], share)
