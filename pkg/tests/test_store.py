import os
import struct
from datetime import datetime

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from _util import month_table
from rax.schema import FeatureDescriptor, FeatureGroup, FeatureKind, FeatureSchema
from rax.store import (
    CorruptPartitionError,
    FeatureStore,
    InsufficientRowsError,
    PartitionKey,
    SchemaMismatchError,
    SplitSpec,
    decode_partition,
    encode_partition,
    split_table,
)
from rax.table import EventTable, to_epoch


def _same(a: EventTable, b: EventTable):
    assert np.array_equal(a.values.view(np.uint64), b.values.view(np.uint64))
    assert np.array_equal(a.missing, b.missing)
    assert np.array_equal(a.collision_id, b.collision_id)
    assert np.array_equal(a.timestamp, b.timestamp)
    assert np.array_equal(a.label, b.label)


def test_write_and_replace_partition(tmp_path):
    store = FeatureStore(tmp_path)
    key = PartitionKey(2025, 10)
    m = store.write_partition(month_table(2025, 10, 100), key)
    assert m.partitions[key].row_count == 100
    m = store.write_partition(month_table(2025, 10, 120, seed=1), key)
    assert len(m.partitions) == 1 and m.partitions[key].row_count == 120
    assert len(FeatureStore(tmp_path).read_partition(key)) == 120


def test_row_outside_month_rejected(tmp_path):
    t = month_table(2025, 9, 5)
    t.timestamp[-1] = to_epoch(datetime(2025, 9, 30, 23, 59))
    with pytest.raises(ValueError):
        FeatureStore(tmp_path).write_partition(t, PartitionKey(2025, 10))


def test_schema_mismatch_refused(tmp_path):
    other = FeatureSchema((FeatureDescriptor("X", FeatureGroup.SpatioTemporal, FeatureKind.Numeric),))
    t = EventTable(np.zeros((1, 1)), np.zeros((1, 1), bool), [1], [to_epoch(datetime(2025, 1, 2))], [0], None, other)
    with pytest.raises(SchemaMismatchError):
        FeatureStore(tmp_path).write_partition(t, PartitionKey(2025, 1))
    FeatureStore(tmp_path).write_table(month_table(2025, 1, 3))
    with pytest.raises(SchemaMismatchError):
        FeatureStore(tmp_path, other)


def test_partition_key_order_and_bounds():
    keys = [PartitionKey(2025, 1), PartitionKey(2024, 12), PartitionKey(2024, 2)]
    assert sorted(keys) == [PartitionKey(2024, 2), PartitionKey(2024, 12), PartitionKey(2025, 1)]
    assert PartitionKey(2024, 12).next() == PartitionKey(2025, 1)
    lo, hi = PartitionKey(2024, 2).bounds()
    assert hi - lo == 29 * 86400
    with pytest.raises(ValueError):
        PartitionKey(2024, 13)


def _multi_month_store(tmp_path, months=((2025, 7), (2025, 8), (2025, 9), (2025, 10)), n=50):
    store = FeatureStore(tmp_path)
    tables = []
    for i, (y, m) in enumerate(months):
        t = month_table(y, m, n, first_id=1 + i * n, seed=i)
        store.write_table(t)
        tables.append(t)
    return store, EventTable.concat(tables)


def test_query_window(tmp_path):
    store, everything = _multi_month_store(tmp_path)
    full = store.query_window(datetime(2025, 8, 1), datetime(2025, 9, 1))
    assert len(full) == store.manifest.partitions[PartitionKey(2025, 8)].row_count
    assert len(store.query_window(datetime(2025, 8, 5), datetime(2025, 8, 5))) == 0

    lo, hi = to_epoch(datetime(2025, 8, 17, 6)), to_epoch(datetime(2025, 9, 11, 13))
    got = store.query_window(lo, hi)
    sel = (everything.timestamp >= lo) & (everything.timestamp < hi)
    _same(got, everything.take(sel).sorted())


def test_query_window_independent_of_file_order(tmp_path):
    store, _ = _multi_month_store(tmp_path)
    a = store.query_window(datetime(2025, 7, 20), datetime(2025, 10, 10))
    store.manifest.partitions = dict(reversed(list(store.manifest.partitions.items())))
    b = store.query_window(datetime(2025, 7, 20), datetime(2025, 10, 10))
    _same(a, b)


def test_rolling_window(tmp_path):
    store, everything = _multi_month_store(tmp_path)
    got = store.rolling_window(2)
    assert {PartitionKey.of(int(t)) for t in got.timestamp} == {PartitionKey(2025, 9), PartitionKey(2025, 10)}
    assert len(store.rolling_window(99)) == len(everything)
    assert len(FeatureStore(tmp_path / "empty").rolling_window(3)) == 0


def _rows(n, ts_choices=None, seed=0):
    rng = np.random.default_rng(seed)
    t = month_table(2025, 1, n, seed=seed)
    if ts_choices is not None:
        t.timestamp = rng.choice(ts_choices, n)
    t.collision_id = rng.permutation(n) + 1
    return t


@pytest.mark.parametrize("n, unused", [(30000, 5000), (25000, 0)])
def test_split_sizes(n, unused):
    t = _rows(n)
    train, test = split_table(t)
    assert (len(train), len(test)) == (20000, 5000)
    s = t.sorted()
    assert np.array_equal(test.collision_id, s.collision_id[-5000:])
    assert np.array_equal(train.collision_id, s.collision_id[unused:unused + 20000])


def test_split_ties_broken_by_collision_id():
    t = _rows(200, ts_choices=np.array([100, 200, 300]), seed=4)
    spec = SplitSpec(n_test=50, n_train=100)
    train1, test1 = split_table(t, spec)
    train2, test2 = split_table(t.take(np.random.default_rng(9).permutation(200)), spec)
    _same(test1, test2)
    _same(train1, train2)
    key = lambda tb, i: (tb.timestamp[i], tb.collision_id[i])  # noqa: E731
    assert key(train1, len(train1) - 1) < key(test1, 0)


def test_split_insufficient_rows(tmp_path):
    with pytest.raises(InsufficientRowsError, match="100 rows"):
        split_table(_rows(100))
    store = FeatureStore(tmp_path)
    store.write_table(month_table(2025, 3, 10))
    with pytest.raises(InsufficientRowsError):
        store.temporal_split()


def test_temporal_split_reads_recent_partitions(tmp_path):
    store, everything = _multi_month_store(tmp_path, n=100)
    train, test = store.temporal_split(SplitSpec(n_test=60, n_train=130))
    ref_train, ref_test = split_table(everything, SplitSpec(n_test=60, n_train=130))
    _same(train, ref_train)
    _same(test, ref_test)


@given(st.integers(0, 300), st.integers(0, 2**32 - 1))
def test_encode_decode_round_trip(n, seed):
    t = month_table(2024, 2, n, seed=seed)
    back = decode_partition(encode_partition(t), t.schema)
    _same(back, t)


def test_factors_round_trip(tmp_path):
    t = month_table(2025, 4, 3)
    t.factors = [("Unsafe Speed",), (), ("A", "B")]
    store = FeatureStore(tmp_path)
    store.write_table(t)
    assert store.read_partition(PartitionKey(2025, 4)).factors == t.factors


def test_corrupt_partition_detected(tmp_path):
    store = FeatureStore(tmp_path)
    store.write_table(month_table(2025, 5, 20))
    path = tmp_path / PartitionKey(2025, 5).relpath
    blob = bytearray(path.read_bytes())
    blob[40] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(CorruptPartitionError):
        store.verify()


def test_interrupted_write_never_torn(tmp_path, monkeypatch):
    store = FeatureStore(tmp_path)
    key = PartitionKey(2025, 6)
    old = month_table(2025, 6, 40)
    store.write_partition(old, key)
    new = month_table(2025, 6, 80, seed=5)

    def boom(src, dst):
        raise OSError("simulated crash before rename")

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        store.write_partition(new, key)
    monkeypatch.undo()
    reopened = FeatureStore(tmp_path)
    _same(reopened.read_partition(key), old.sorted())
    assert not list((tmp_path / "year=2025" / "month=06").glob("*.tmp"))


def test_truncated_file_fails_checksum():
    t = month_table(2025, 6, 30)
    blob = encode_partition(t)
    for cut in (5, len(blob) // 2, len(blob) - 1):
        torn = blob[:cut]
        with pytest.raises(CorruptPartitionError):
            decode_partition(torn, t.schema)
    assert struct.unpack("<I", blob[-4:])[0] != 0


def test_tiny_torn_file_is_detected(tmp_path):
    store = FeatureStore(tmp_path)
    store.write_table(month_table(2025, 7, 10))
    path = tmp_path / PartitionKey(2025, 7).relpath
    for cut in (0, 1, 3):
        path.write_bytes(path.read_bytes()[:cut] if cut else b"")
        with pytest.raises(CorruptPartitionError):
            FeatureStore(tmp_path).read_partition(PartitionKey(2025, 7))
