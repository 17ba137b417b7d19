"""Binary index container.

Layout, all little-endian::

    b"HYNN" | version:u8 | kind:u8 | payload

The payload always starts with the dataset (``n:i64 dim:i64 ids:i64[n]
points:f64[n*dim]``), followed by kind-specific fields.  A shell index
nests one ``kind:u8 | payload`` record per band after its parameters.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .geometry import ShellParams
from .oracles import BruteForceOracle, EuclideanOracle, KdTree, LshIndex, LshParams
from .search import ShellPartition

MAGIC = b"HYNN"
VERSION = 1

KIND_BRUTE, KIND_KDTREE, KIND_LSH, KIND_SHELL = 1, 2, 3, 4
_KIND_NAMES = {KIND_BRUTE: "brute", KIND_KDTREE: "kdtree", KIND_LSH: "lsh", KIND_SHELL: "shell"}


class PersistenceError(ValueError):
    pass


class _Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def u8(self, v):
        self.parts.append(struct.pack("<B", v))

    def i64(self, v):
        self.parts.append(struct.pack("<q", int(v)))

    def f64(self, v):
        self.parts.append(struct.pack("<d", float(v)))

    def arr_i64(self, a):
        self.parts.append(np.ascontiguousarray(a, dtype="<i8").tobytes())

    def arr_f64(self, a):
        self.parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())

    def bytes(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def _take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise PersistenceError("truncated index file")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self._take(1)[0]

    def i64(self) -> int:
        return struct.unpack("<q", self._take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self._take(8))[0]

    def count(self) -> int:
        v = self.i64()
        if v < 0:
            raise PersistenceError(f"negative length {v} in index file")
        return v

    def arr_i64(self, n: int) -> np.ndarray:
        return np.frombuffer(self._take(8 * n), dtype="<i8").astype(np.int64)

    def arr_f64(self, n: int) -> np.ndarray:
        return np.frombuffer(self._take(8 * n), dtype="<f8").astype(np.float64)


def _write_dataset(w: _Writer, data: Dataset):
    w.i64(len(data))
    w.i64(data.dim)
    w.arr_i64(data.ids)
    w.arr_f64(data.points.reshape(-1))


def _read_dataset(r: _Reader) -> Dataset:
    n, dim = r.count(), r.count()
    ids = r.arr_i64(n)
    X = r.arr_f64(n * dim).reshape(n, dim)
    return Dataset(X, ids, dim=dim)


def _kind_of(index) -> int:
    if isinstance(index, ShellPartition):
        return KIND_SHELL
    if isinstance(index, KdTree):
        return KIND_KDTREE
    if isinstance(index, LshIndex):
        return KIND_LSH
    if type(index) is BruteForceOracle:
        return KIND_BRUTE
    raise PersistenceError(f"cannot persist index of type {type(index).__name__}")


def _write_lsh_params(w: _Writer, p: LshParams):
    w.i64(p.num_tables)
    w.i64(p.hyperplanes_per_table)
    w.f64(p.granularity)
    w.i64(p.probe_radius)
    w.i64(p.seed)


def _read_lsh_params(r: _Reader) -> LshParams:
    T, h = r.count(), r.count()
    g = r.f64()
    pr = r.count()
    seed = r.i64()
    return LshParams(T, h, g, pr, seed)


def _write_payload(w: _Writer, index, kind: int):
    if kind == KIND_SHELL:
        part: ShellPartition = index
        _write_dataset(w, part.dataset)
        w.f64(part.params.width)
        w.f64(part.params.max_norm)
        w.i64(part.params.num_bands)
        w.u8(1 if part.auto_granularity else 0)
        for o in part.bands:
            k = _kind_of(o)
            w.u8(k)
            _write_payload(w, o, k)
        return
    _write_dataset(w, index.dataset)
    if kind == KIND_KDTREE:
        t: KdTree = index
        w.i64(t.leaf_size)
        w.i64(len(t.split_dim))
        w.arr_i64(t.perm)
        w.arr_i64(t.split_dim)
        w.arr_f64(t.split_val)
        for a in (t.left, t.right, t.start, t.end):
            w.arr_i64(a)
    elif kind == KIND_LSH:
        x: LshIndex = index
        _write_lsh_params(w, x.params)
        w.arr_f64(x.normals.reshape(-1))
        for table in x.tables:
            w.i64(len(table))
            for key in sorted(table):
                rows = table[key]
                w.arr_i64(np.asarray(key))
                w.i64(len(rows))
                w.arr_i64(rows)


def _read_payload(r: _Reader, kind: int):
    if kind == KIND_SHELL:
        data = _read_dataset(r)
        width, max_norm = r.f64(), r.f64()
        params = ShellParams(width, max_norm, r.count())
        auto = bool(r.u8())
        bands = []
        for b in range(params.num_bands):
            k = r.u8()
            if k not in (KIND_BRUTE, KIND_KDTREE, KIND_LSH):
                raise PersistenceError(f"band {b + 1}: unsupported index kind {k}")
            o = _read_payload(r, k)
            if o.dataset.dim != data.dim:
                raise PersistenceError(f"band {b + 1}: dimension {o.dataset.dim} != {data.dim}")
            bands.append(o)
        kinds = {_KIND_NAMES[_kind_of(o)] for o in bands}
        lsh = next((o.params for o in bands if isinstance(o, LshIndex)), None)
        return ShellPartition(params, data, bands, kinds.pop() if len(kinds) == 1 else "mixed", lsh, auto)
    data = _read_dataset(r)
    if kind == KIND_BRUTE:
        return BruteForceOracle(data)
    if kind == KIND_KDTREE:
        leaf = r.count()
        m = r.count()
        perm = r.arr_i64(len(data))
        split_dim = r.arr_i64(m)
        split_val = r.arr_f64(m)
        rest = [r.arr_i64(m) for _ in range(4)]
        if np.any(split_dim >= data.dim):
            raise PersistenceError("kd-tree split dimension exceeds dataset dimension")
        return KdTree(data, leaf, _arrays=(perm, split_dim, split_val, *rest))
    if kind == KIND_LSH:
        p = _read_lsh_params(r)
        normals = r.arr_f64(p.num_tables * p.hyperplanes_per_table * data.dim)
        normals = normals.reshape(p.num_tables, p.hyperplanes_per_table, data.dim)
        tables = []
        for _ in range(p.num_tables):
            table = {}
            for _ in range(r.count()):
                key = tuple(int(v) for v in r.arr_i64(p.hyperplanes_per_table))
                table[key] = r.arr_i64(r.count())
            tables.append(table)
        return LshIndex(data, p, normals=normals, tables=tables)
    raise PersistenceError(f"unknown index kind {kind}")


def dumps_index(index: EuclideanOracle | ShellPartition) -> bytes:
    kind = _kind_of(index)
    w = _Writer()
    w.parts.append(MAGIC)
    w.u8(VERSION)
    w.u8(kind)
    _write_payload(w, index, kind)
    return w.bytes()


def loads_index(buf: bytes, expected_dim: int | None = None):
    r = _Reader(buf)
    if r._take(4) != MAGIC:
        raise PersistenceError("not an index file (bad magic)")
    version = r.u8()
    if version != VERSION:
        raise PersistenceError(f"unsupported index format version {version} (expected {VERSION})")
    index = _read_payload(r, r.u8())
    if r.pos != len(buf):
        raise PersistenceError(f"{len(buf) - r.pos} trailing bytes after index payload")
    if expected_dim is not None and index.dataset.dim != expected_dim:
        raise PersistenceError(f"index dimension {index.dataset.dim} != expected {expected_dim}")
    return index


def save_index(path, index) -> None:
    Path(path).write_bytes(dumps_index(index))


def load_index(path, expected_dim: int | None = None):
    return loads_index(Path(path).read_bytes(), expected_dim)


def index_kind(index) -> str:
    return _KIND_NAMES[_kind_of(index)]
