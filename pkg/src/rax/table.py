"""Columnar batch of event rows, the common currency between store, models and explainers."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Sequence

import numpy as np

from .schema import EventFeatureRow, FeatureSchema, SeverityLabel, canonical_schema


def to_epoch(ts: datetime) -> int:
    """Naive timestamps are wall-clock values interpreted as UTC."""
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return int(ts.timestamp())


def from_epoch(sec: int) -> datetime:
    return datetime.fromtimestamp(int(sec), tz=timezone.utc).replace(tzinfo=None)


@dataclass
class EventTable:
    values: np.ndarray  # (n, d) float64
    missing: np.ndarray  # (n, d) bool
    collision_id: np.ndarray  # (n,) int64
    timestamp: np.ndarray  # (n,) int64 seconds since epoch
    label: np.ndarray  # (n,) int8
    factors: list[tuple[str, ...]] | None = None
    schema: FeatureSchema = field(default_factory=canonical_schema)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        self.missing = np.ascontiguousarray(self.missing, dtype=bool)
        self.collision_id = np.asarray(self.collision_id, dtype=np.int64)
        self.timestamp = np.asarray(self.timestamp, dtype=np.int64)
        self.label = np.asarray(self.label, dtype=np.int8)
        n = len(self.collision_id)
        if self.values.shape != (n, len(self.schema)) or self.missing.shape != self.values.shape:
            raise ValueError(
                f"shape mismatch: values {self.values.shape}, missing {self.missing.shape}, "
                f"{n} ids, {len(self.schema)} features"
            )
        if len(self.timestamp) != n or len(self.label) != n:
            raise ValueError("metadata columns must match row count")
        if self.factors is not None and len(self.factors) != n:
            raise ValueError("factors must match row count")

    def __len__(self) -> int:
        return len(self.collision_id)

    @property
    def schema_hash(self) -> int:
        return self.schema.schema_hash

    @classmethod
    def empty(cls, schema: FeatureSchema | None = None) -> EventTable:
        schema = schema or canonical_schema()
        d = len(schema)
        return cls(
            np.zeros((0, d)),
            np.zeros((0, d), bool),
            np.zeros(0, np.int64),
            np.zeros(0, np.int64),
            np.zeros(0, np.int8),
            [],
            schema,
        )

    @classmethod
    def from_rows(cls, rows: Sequence[EventFeatureRow], schema: FeatureSchema | None = None) -> EventTable:
        schema = schema or canonical_schema()
        if not rows:
            return cls.empty(schema)
        return cls(
            np.stack([r.values for r in rows]),
            np.stack([r.missing_mask for r in rows]),
            np.array([r.collision_id for r in rows], np.int64),
            np.array([to_epoch(r.timestamp) for r in rows], np.int64),
            np.array([int(r.label) for r in rows], np.int8),
            [tuple(r.contributing_factors) for r in rows],
            schema,
        )

    def row(self, i: int) -> EventFeatureRow:
        return EventFeatureRow(
            collision_id=int(self.collision_id[i]),
            timestamp=from_epoch(self.timestamp[i]),
            label=SeverityLabel(int(self.label[i])),
            values=self.values[i],
            missing_mask=self.missing[i],
            contributing_factors=self.factors[i] if self.factors is not None else (),
        )

    def rows(self) -> Iterable[EventFeatureRow]:
        for i in range(len(self)):
            yield self.row(i)

    def take(self, idx) -> EventTable:
        idx = np.asarray(idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return EventTable(
            self.values[idx],
            self.missing[idx],
            self.collision_id[idx],
            self.timestamp[idx],
            self.label[idx],
            [self.factors[i] for i in idx] if self.factors is not None else None,
            self.schema,
        )

    def order(self) -> np.ndarray:
        """Indices sorting rows by (timestamp, collision_id)."""
        return np.lexsort((self.collision_id, self.timestamp))

    def sorted(self) -> EventTable:
        return self.take(self.order())

    def model_matrix(self) -> np.ndarray:
        """Feature matrix for models: masked entries become NaN (routed as missing)."""
        X = self.values.copy()
        X[self.missing] = np.nan
        return X

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.schema.index(name)]

    @staticmethod
    def concat(tables: Sequence[EventTable]) -> EventTable:
        tables = [t for t in tables if t is not None]
        if not tables:
            return EventTable.empty()
        schema = tables[0].schema
        for t in tables:
            if t.schema_hash != schema.schema_hash:
                raise ValueError("cannot concatenate tables with different schemas")
        has_factors = all(t.factors is not None for t in tables)
        return EventTable(
            np.concatenate([t.values for t in tables]),
            np.concatenate([t.missing for t in tables]),
            np.concatenate([t.collision_id for t in tables]),
            np.concatenate([t.timestamp for t in tables]),
            np.concatenate([t.label for t in tables]),
            [f for t in tables for f in t.factors] if has_factors else None,
            schema,
        )
