"""Overlap between SHAP top-k features and the factors a narrative mentions."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

from .lexicon import Lexicon, default_lexicon


def aligned_threshold(k: int) -> int:
    """Matches needed to call an event aligned: 2 of 3, generally ceil(2k/3)."""
    return math.ceil(2 * k / 3)


def align_sets(shap_top: Sequence[str], mentions: set[str], k: int | None = None):
    """(recall_at_k, precision, aligned) from the top-k set and the mentioned set."""
    top = set(shap_top)
    k = len(top) if k is None else k
    if k < 1:
        raise ValueError("k must be >= 1")
    hit = len(top & mentions)
    recall = hit / k
    precision = hit / len(mentions) if mentions else 0.0
    return recall, precision, hit >= aligned_threshold(k)


def align(shap_top: Sequence[str], narrative: str, lexicon: Lexicon | None = None, k: int = 3):
    lexicon = lexicon or default_lexicon()
    return align_sets(list(shap_top)[:k], lexicon.mentions(narrative), k)


def alignment_score(mean_recall: float, mean_precision: float) -> float:
    """Harmonic mean of the two means; 0 when both are 0."""
    for v in (mean_recall, mean_precision):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{v} outside [0, 1]")
    s = mean_recall + mean_precision
    return 0.0 if s == 0 else 2 * mean_recall * mean_precision / s


@dataclass
class EventAlignment:
    collision_id: int
    shap_top_k: list[str]
    mentions: list[str]
    recall_at_k: float
    precision: float
    aligned: bool


@dataclass
class AlignmentReport:
    events: list[EventAlignment] = field(default_factory=list)
    k: int = 3

    @property
    def mean_recall(self) -> float:
        return sum(e.recall_at_k for e in self.events) / len(self.events) if self.events else 0.0

    @property
    def mean_precision(self) -> float:
        return sum(e.precision for e in self.events) / len(self.events) if self.events else 0.0

    @property
    def alignment_score(self) -> float:
        return alignment_score(self.mean_recall, self.mean_precision)

    @property
    def aligned_fraction(self) -> float:
        return sum(e.aligned for e in self.events) / len(self.events) if self.events else 0.0

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "n_events": len(self.events),
            "mean_recall_at_k": self.mean_recall,
            "mean_precision": self.mean_precision,
            "alignment_score": self.alignment_score,
            "aligned_fraction": self.aligned_fraction,
            "events": [e.__dict__ for e in self.events],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def build_report(items, lexicon: Lexicon | None = None, k: int = 3) -> AlignmentReport:
    """``items``: iterable of (collision_id, shap_top list, explanation text)."""
    lexicon = lexicon or default_lexicon()
    report = AlignmentReport(k=k)
    for cid, top, text in items:
        top = list(top)[:k]
        ment = lexicon.mentions(text)
        r, p, a = align_sets(top, ment, k)
        report.events.append(EventAlignment(int(cid), top, sorted(ment), r, p, a))
    return report
