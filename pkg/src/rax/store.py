"""Month-partitioned columnar event store (RAXF files + JSON manifest)."""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Iterator

import numpy as np

from .schema import FeatureKind, FeatureSchema, canonical_schema
from .table import EventTable, from_epoch, to_epoch

MAGIC = b"RAXF"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHQQ")
_KIND_DTYPES = {
    FeatureKind.Numeric: np.dtype("<f8"),
    FeatureKind.Binary: np.dtype("u1"),
    FeatureKind.CategoricalCode: np.dtype("<i4"),
}


class StoreError(RuntimeError):
    pass


class SchemaMismatchError(StoreError):
    pass


class CorruptPartitionError(StoreError):
    pass


class InsufficientRowsError(StoreError):
    pass


@dataclass(frozen=True, order=True)
class PartitionKey:
    year: int
    month: int

    def __post_init__(self):
        if not 1 <= self.month <= 12:
            raise ValueError(f"month must be in 1..12, got {self.month}")

    @classmethod
    def of(cls, ts: datetime | int) -> PartitionKey:
        if not isinstance(ts, datetime):
            ts = from_epoch(ts)
        return cls(ts.year, ts.month)

    def start(self) -> datetime:
        return datetime(self.year, self.month, 1)

    def next(self) -> PartitionKey:
        return PartitionKey(self.year + self.month // 12, self.month % 12 + 1)

    def bounds(self) -> tuple[int, int]:
        """[start, end) in epoch seconds."""
        return to_epoch(self.start()), to_epoch(self.next().start())

    @property
    def relpath(self) -> str:
        return f"year={self.year:04d}/month={self.month:02d}/part.raxf"

    def __str__(self) -> str:
        return f"{self.year:04d}-{self.month:02d}"


@dataclass(frozen=True)
class SplitSpec:
    n_test: int = 5000
    n_train: int = 20000

    def __post_init__(self):
        if self.n_test <= 0 or self.n_train <= 0:
            raise ValueError("n_test and n_train must be positive")


def split_table(table: EventTable, spec: SplitSpec | None = None) -> tuple[EventTable, EventTable]:
    """Most recent ``n_test`` rows by (timestamp, collision_id) are the test set, the
    ``n_train`` rows just before them the training set."""
    spec = spec or SplitSpec()
    need = spec.n_train + spec.n_test
    if len(table) < need:
        raise InsufficientRowsError(
            f"table holds {len(table)} rows, split needs {need} ({spec.n_train} train + {spec.n_test} test)"
        )
    rows = table.sorted()
    n = len(rows)
    test = rows.take(np.arange(n - spec.n_test, n))
    train = rows.take(np.arange(n - need, n - spec.n_test))
    return train, test


@dataclass(frozen=True)
class PartitionEntry:
    key: PartitionKey
    row_count: int
    min_timestamp: int
    max_timestamp: int
    checksum: int

    def to_dict(self) -> dict:
        return {
            "year": self.key.year,
            "month": self.key.month,
            "path": self.key.relpath,
            "row_count": self.row_count,
            "min_timestamp": from_epoch(self.min_timestamp).isoformat(),
            "max_timestamp": from_epoch(self.max_timestamp).isoformat(),
            "checksum": f"{self.checksum:08x}",
        }

    @classmethod
    def from_dict(cls, d: dict) -> PartitionEntry:
        return cls(
            PartitionKey(d["year"], d["month"]),
            d["row_count"],
            to_epoch(datetime.fromisoformat(d["min_timestamp"])),
            to_epoch(datetime.fromisoformat(d["max_timestamp"])),
            int(d["checksum"], 16),
        )


@dataclass
class Manifest:
    schema_hash: int
    partitions: dict[PartitionKey, PartitionEntry]

    def keys(self) -> list[PartitionKey]:
        return sorted(self.partitions)

    @property
    def row_count(self) -> int:
        return sum(p.row_count for p in self.partitions.values())

    def to_json(self) -> str:
        return json.dumps(
            {
                "version": FORMAT_VERSION,
                "schema_hash": f"{self.schema_hash:016x}",
                "partitions": [self.partitions[k].to_dict() for k in self.keys()],
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> Manifest:
        doc = json.loads(text)
        entries = [PartitionEntry.from_dict(p) for p in doc["partitions"]]
        parts = {e.key: e for e in entries}
        if len(parts) != len(entries):
            raise StoreError("manifest lists a partition key twice")
        return cls(int(doc["schema_hash"], 16), parts)


# -- RAXF encoding ---------------------------------------------------------


def encode_partition(table: EventTable) -> bytes:
    n = len(table)
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, table.schema_hash, n)]
    for j, desc in enumerate(table.schema.features):
        present = ~table.missing[:, j]
        parts.append(np.packbits(present, bitorder="little").tobytes())
        parts.append(table.values[:, j].astype(_KIND_DTYPES[desc.kind]).tobytes())
    parts.append(table.collision_id.astype("<u8").tobytes())
    parts.append(table.timestamp.astype("<i8").tobytes())
    parts.append(table.label.astype("u1").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_partition(
    blob: bytes, schema: FeatureSchema, factors: list | None = None
) -> EventTable:
    if len(blob) < _HEADER.size + 4:
        raise CorruptPartitionError("file too short")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptPartitionError("CRC-32 mismatch")
    magic, version, schema_hash, n = _HEADER.unpack_from(body)
    if magic != MAGIC:
        raise CorruptPartitionError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CorruptPartitionError(f"unsupported version {version}")
    if schema_hash != schema.schema_hash:
        raise SchemaMismatchError(
            f"partition schema {schema_hash:016x} != expected {schema.schema_hash:016x}"
        )
    d = len(schema)
    values = np.empty((n, d))
    missing = np.empty((n, d), bool)
    off = _HEADER.size
    nbits = (n + 7) // 8
    for j, desc in enumerate(schema.features):
        bits = np.frombuffer(body, np.uint8, nbits, off)
        off += nbits
        missing[:, j] = ~np.unpackbits(bits, count=n, bitorder="little").astype(bool)
        dt = _KIND_DTYPES[desc.kind]
        values[:, j] = np.frombuffer(body, dt, n, off)
        off += n * dt.itemsize
    cid = np.frombuffer(body, "<u8", n, off).astype(np.int64)
    off += 8 * n
    ts = np.frombuffer(body, "<i8", n, off).astype(np.int64)
    off += 8 * n
    label = np.frombuffer(body, "u1", n, off).astype(np.int8)
    off += n
    if off != len(body):
        raise CorruptPartitionError(f"trailing bytes: expected {off}, got {len(body)}")
    return EventTable(values, missing, cid, ts, label, factors, schema)


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class FeatureStore:
    """Single-writer store. Readers only ever see whole partitions (rename + CRC)."""

    def __init__(self, root, schema: FeatureSchema | None = None):
        self.root = Path(root)
        self.schema = schema or canonical_schema()
        mpath = self.root / "manifest.json"
        if mpath.exists():
            self.manifest = Manifest.from_json(mpath.read_text(encoding="utf-8"))
            if self.manifest.schema_hash != self.schema.schema_hash:
                raise SchemaMismatchError(
                    f"store schema {self.manifest.schema_hash:016x} != "
                    f"expected {self.schema.schema_hash:016x}"
                )
        else:
            self.manifest = Manifest(self.schema.schema_hash, {})

    def __len__(self) -> int:
        return self.manifest.row_count

    def keys(self) -> list[PartitionKey]:
        return self.manifest.keys()

    def write_partition(self, table: EventTable, key: PartitionKey) -> Manifest:
        if table.schema_hash != self.manifest.schema_hash:
            raise SchemaMismatchError(
                f"rows have schema {table.schema_hash:016x}, store expects {self.manifest.schema_hash:016x}"
            )
        lo, hi = key.bounds()
        bad = (table.timestamp < lo) | (table.timestamp >= hi)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise ValueError(
                f"row {int(table.collision_id[i])} dated {from_epoch(table.timestamp[i])} is outside partition {key}"
            )
        table = table.sorted()
        blob = encode_partition(table)
        path = self.root / key.relpath
        if table.factors is not None:
            _atomic_write(path.with_name("factors.json"), json.dumps([list(f) for f in table.factors]).encode())
        _atomic_write(path, blob)
        n = len(table)
        self.manifest.partitions[key] = PartitionEntry(
            key,
            n,
            int(table.timestamp.min()) if n else lo,
            int(table.timestamp.max()) if n else lo,
            struct.unpack("<I", blob[-4:])[0],
        )
        _atomic_write(self.root / "manifest.json", self.manifest.to_json().encode("utf-8"))
        return self.manifest

    def write_table(self, table: EventTable) -> Manifest:
        """Split rows by month and write (replacing) each touched partition."""
        if len(table) == 0:
            return self.manifest
        keys = [PartitionKey.of(int(t)) for t in table.timestamp]
        by_key: dict[PartitionKey, list[int]] = {}
        for i, k in enumerate(keys):
            by_key.setdefault(k, []).append(i)
        for k in sorted(by_key):
            self.write_partition(table.take(by_key[k]), k)
        return self.manifest

    def read_partition(self, key: PartitionKey) -> EventTable:
        entry = self.manifest.partitions.get(key)
        if entry is None:
            raise KeyError(f"no partition {key}")
        path = self.root / key.relpath
        blob = path.read_bytes()
        if len(blob) < 4 or struct.unpack("<I", blob[-4:])[0] != entry.checksum:
            raise CorruptPartitionError(f"{path}: checksum differs from manifest")
        fpath = path.with_name("factors.json")
        factors = None
        if fpath.exists():
            factors = [tuple(f) for f in json.loads(fpath.read_text(encoding="utf-8"))]
            if len(factors) != entry.row_count:
                factors = None
        table = decode_partition(blob, self.schema, factors)
        if len(table) != entry.row_count:
            raise CorruptPartitionError(f"{path}: row count differs from manifest")
        return table

    def iter_partitions(self, keys=None) -> Iterator[tuple[PartitionKey, EventTable]]:
        for k in keys if keys is not None else self.keys():
            yield k, self.read_partition(k)

    def verify(self) -> None:
        """Check every listed file exists and matches its manifest checksum."""
        for k in self.keys():
            self.read_partition(k)

    def read_all(self) -> EventTable:
        return EventTable.concat([t for _, t in self.iter_partitions()]).sorted()

    def query_window(self, start, end) -> EventTable:
        """Rows with start <= t < end, ordered by (timestamp, collision_id)."""
        lo = to_epoch(start) if isinstance(start, datetime) else int(start)
        hi = to_epoch(end) if isinstance(end, datetime) else int(end)
        if lo > hi:
            raise ValueError("start must not be after end")
        if lo == hi:
            return EventTable.empty(self.schema)
        keys = [k for k in self.keys() if k.bounds()[0] < hi and k.bounds()[1] > lo]
        tables = []
        for _, t in self.iter_partitions(keys):
            sel = (t.timestamp >= lo) & (t.timestamp < hi)
            tables.append(t.take(sel))
        if not tables:
            return EventTable.empty(self.schema)
        return EventTable.concat(tables).sorted()

    def temporal_split(self, spec: SplitSpec | None = None) -> tuple[EventTable, EventTable]:
        spec = spec or SplitSpec()
        need = spec.n_train + spec.n_test
        if len(self) < need:
            raise InsufficientRowsError(
                f"store holds {len(self)} rows, split needs {need} ({spec.n_train} train + {spec.n_test} test)"
            )
        tables, have = [], 0
        for k in reversed(self.keys()):
            tables.append(self.read_partition(k))
            have += len(tables[-1])
            if have >= need:
                break
        return split_table(EventTable.concat(tables), spec)

    def rolling_window(self, months: int) -> EventTable:
        if months < 1:
            raise ValueError("months must be >= 1")
        keys = self.keys()[-months:]
        if not keys:
            return EventTable.empty(self.schema)
        return EventTable.concat([t for _, t in self.iter_partitions(keys)]).sorted()
