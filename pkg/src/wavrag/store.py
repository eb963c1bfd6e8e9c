"""Embedding persistence: flat binary stores for vectors and projection heads.

Store layout (magic ``WVRG``, all integers little-endian)::

    magic    4 bytes  b"WVRG"
    version  u16      = 1
    dim      u32      vector dimension
    count    u64      number of rows
    rows     count * dim * f32, row-major IEEE-754
    ids      count * [u32 length, UTF-8 bytes]

Projection-head files reuse the same header discipline under magic ``WVRH``
(``dim`` = input dimension, ``count`` = output dimension, rows = the weight
matrix) and carry no id table.

Round-trips are bit-exact: ``write(read(path))`` reproduces the file byte for
byte, including id order.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Sequence

import numpy as np

from .errors import NotFoundError, StoreFormatError

__all__ = [
    "STORE_MAGIC",
    "HEAD_MAGIC",
    "FORMAT_VERSION",
    "unit_vector",
    "EmbeddingStore",
    "write_store",
    "read_store",
    "write_head_matrix",
    "read_head_matrix",
]

STORE_MAGIC = b"WVRG"
HEAD_MAGIC = b"WVRH"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<HIQ")  # version, dim, count


def unit_vector(values, dim: int | None = None) -> np.ndarray:
    """Validate and L2-normalize a vector to unit norm (float32).

    Raises ValueError on non-finite input or the zero vector; callers map the
    latter to a context-appropriate engine error.
    """
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"expected dim {dim}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite components")
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ValueError("zero vector cannot be normalized")
    return (v / norm).astype(np.float32)


@dataclass
class EmbeddingStore:
    """Immutable in-memory view of pre-encoded vectors keyed by id."""

    dim: int
    rows: np.ndarray  # (count, dim) float32
    ids: list[str]
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.rows = np.ascontiguousarray(self.rows, dtype=np.float32).reshape(-1, self.dim)
        if len(self.ids) != self.rows.shape[0]:
            raise ValueError("ids and rows disagree in length")
        self._index = {}
        for i, doc_id in enumerate(self.ids):
            if doc_id in self._index:
                raise ValueError(f"duplicate id in store: {doc_id!r}")
            self._index[doc_id] = i

    @classmethod
    def empty(cls, dim: int) -> "EmbeddingStore":
        return cls(dim, np.zeros((0, dim), dtype=np.float32), [])

    @classmethod
    def from_vectors(cls, ids: Sequence[str], vectors: Sequence[np.ndarray]) -> "EmbeddingStore":
        if not ids:
            raise ValueError("from_vectors needs at least one vector; use empty()")
        rows = np.stack([np.asarray(v, dtype=np.float32) for v in vectors])
        return cls(rows.shape[1], rows, list(ids))

    @property
    def count(self) -> int:
        return self.rows.shape[0]

    def __len__(self) -> int:
        return self.count

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._index

    def row_index(self, doc_id: str) -> int:
        try:
            return self._index[doc_id]
        except KeyError:
            raise NotFoundError(f"id not in store: {doc_id!r}") from None

    def vector(self, doc_id: str) -> np.ndarray:
        return self.rows[self.row_index(doc_id)]


def _read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise StoreFormatError(f"truncated store: expected {n} bytes for {what}, got {len(data)}")
    return data


def _write_header(f: BinaryIO, magic: bytes, dim: int, count: int) -> None:
    f.write(magic)
    f.write(_HEADER.pack(FORMAT_VERSION, dim, count))


def _read_header(f: BinaryIO, magic: bytes) -> tuple[int, int]:
    got = _read_exact(f, 4, "magic")
    if got != magic:
        raise StoreFormatError(f"bad magic: expected {magic!r}, got {got!r}")
    version, dim, count = _HEADER.unpack(_read_exact(f, _HEADER.size, "header"))
    if version != FORMAT_VERSION:
        raise StoreFormatError(f"unsupported version: expected {FORMAT_VERSION}, got {version}")
    if dim <= 0:
        raise StoreFormatError(f"invalid dim: {dim}")
    return dim, count


def write_store(store: EmbeddingStore, path: str | Path) -> None:
    buf = io.BytesIO()
    _write_header(buf, STORE_MAGIC, store.dim, store.count)
    buf.write(store.rows.astype("<f4").tobytes(order="C"))
    for doc_id in store.ids:
        raw = doc_id.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
    Path(path).write_bytes(buf.getvalue())


def read_store(path: str | Path) -> EmbeddingStore:
    with open(path, "rb") as f:
        dim, count = _read_header(f, STORE_MAGIC)
        rows_bytes = _read_exact(f, count * dim * 4, "rows")
        rows = np.frombuffer(rows_bytes, dtype="<f4").reshape(count, dim)
        ids = []
        for i in range(count):
            (length,) = struct.unpack("<I", _read_exact(f, 4, f"id length {i}"))
            ids.append(_read_exact(f, length, f"id {i}").decode("utf-8"))
        trailing = f.read(1)
        if trailing:
            raise StoreFormatError("trailing bytes after id table")
    return EmbeddingStore(dim, rows.copy(), ids)


def write_head_matrix(weights: np.ndarray, path: str | Path) -> None:
    """Persist a (d_out, d_in) weight matrix as float32 under magic WVRH."""
    w = np.ascontiguousarray(weights, dtype="<f4")
    if w.ndim != 2:
        raise ValueError("head weights must be a 2-D matrix")
    d_out, d_in = w.shape
    buf = io.BytesIO()
    _write_header(buf, HEAD_MAGIC, d_in, d_out)
    buf.write(w.tobytes(order="C"))
    Path(path).write_bytes(buf.getvalue())


def read_head_matrix(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        d_in, d_out = _read_header(f, HEAD_MAGIC)
        raw = _read_exact(f, d_out * d_in * 4, "weights")
        trailing = f.read(1)
        if trailing:
            raise StoreFormatError("trailing bytes after weights")
    return np.frombuffer(raw, dtype="<f4").reshape(d_out, d_in).copy()
