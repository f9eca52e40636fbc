"""RAXM model files: one self-describing little-endian binary per model, CRC-32 trailer."""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from .boosting import BoostedModel
from .forest import ForestModel
from .linear import LinearModel
from .tree import Tree

MAGIC = b"RAXM"
VERSION = 1
KIND_CODES = {"forest": 0, "boosted": 1, "linear": 2}
_COMMON = struct.Struct("<4sHBQIB")


class ModelFormatError(ValueError):
    pass


def _node_dtype(n_out: int) -> np.dtype:
    return np.dtype(
        [("feature", "<i4"), ("threshold", "<f8"), ("left", "<i4"), ("right", "<i4"),
         ("cover", "<f8"), ("value", "<f8", (n_out,))]
    )


def _encode_tree(t: Tree) -> bytes:
    arr = np.empty(t.n_nodes, _node_dtype(t.n_outputs))
    for name in ("feature", "threshold", "left", "right", "cover"):
        arr[name] = getattr(t, name)
    arr["value"] = t.value
    return struct.pack("<IB", t.n_nodes, t.n_outputs) + arr.tobytes()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.off = 0

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        out = s.unpack_from(self.buf, self.off)
        self.off += s.size
        return out

    def array(self, dtype, count):
        dt = np.dtype(dtype)
        out = np.frombuffer(self.buf, dt, count, self.off).copy()
        self.off += dt.itemsize * count
        return out

    def tree(self) -> Tree:
        n, k = self.unpack("<IB")
        arr = self.array(_node_dtype(k), n)
        return Tree(arr["feature"], arr["threshold"], arr["left"], arr["right"], arr["cover"], arr["value"])


def dumps(model) -> bytes:
    kind = model.kind
    parts = [_COMMON.pack(MAGIC, VERSION, KIND_CODES[kind], model.schema_hash, model.n_features, model.n_classes)]
    if kind == "forest":
        parts.append(struct.pack("<I", len(model.trees)))
        parts.append(np.asarray(model.class_weights, "<f8").tobytes())
        parts += [_encode_tree(t) for t in model.trees]
    elif kind == "boosted":
        parts.append(struct.pack("<dd", model.learning_rate, model.reg_lambda))
        parts.append(np.asarray(model.base_score, "<f8").tobytes())
        parts.append(struct.pack("<I", model.n_rounds))
        parts += [_encode_tree(t) for _, t in model.iter_trees()]
    elif kind == "linear":
        parts.append(struct.pack("<d?I", model.l2, model.converged, model.n_iter))
        for a in (model.means, model.scales, model.weights.ravel(), model.bias):
            parts.append(np.asarray(a, "<f8").tobytes())
    else:
        raise TypeError(f"cannot serialise model kind {kind!r}")
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def loads(blob: bytes):
    if len(blob) < _COMMON.size + 4:
        raise ModelFormatError("file too short")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise ModelFormatError("CRC-32 mismatch")
    r = _Reader(body)
    magic, version, kind, schema_hash, d, k = r.unpack(_COMMON.format)
    if magic != MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ModelFormatError(f"unsupported version {version}")
    if kind == 0:
        (n,) = r.unpack("<I")
        cw = tuple(float(x) for x in r.array("<f8", k))
        model = ForestModel([r.tree() for _ in range(n)], cw, d, schema_hash, k)
    elif kind == 1:
        lr, lam = r.unpack("<dd")
        base = r.array("<f8", k)
        (n,) = r.unpack("<I")
        rounds = [[r.tree() for _ in range(k)] for _ in range(n)]
        model = BoostedModel(rounds, lr, base, lam, d, schema_hash, k)
    elif kind == 2:
        l2, conv, n_iter = r.unpack("<d?I")
        means, scales = r.array("<f8", d), r.array("<f8", d)
        W = r.array("<f8", k * d).reshape(k, d)
        b = r.array("<f8", k)
        model = LinearModel(W, b, means, scales, l2, schema_hash, conv, n_iter)
    else:
        raise ModelFormatError(f"unknown model kind code {kind}")
    if r.off != len(body):
        raise ModelFormatError("trailing bytes after model payload")
    return model


def save_model(model, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    with os.fdopen(fd, "wb") as fh:
        fh.write(dumps(model))
    os.replace(tmp, path)


def load_model(path):
    return loads(Path(path).read_bytes())
