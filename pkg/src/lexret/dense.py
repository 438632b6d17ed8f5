"""Embedding store and exact cosine top-k search.

Vectors are produced externally (by a trainer or an embedding service)
and exchanged through a single binary format: magic ``EMB1``,
little-endian u32 count and u32 dimension, a u8 normalized flag, then
``n * dim`` little-endian float32 values in row-major order, row order
equal to passage handle order.

Rows are L2-normalized on load unless the file is flagged normalized, so
cosine similarity reduces to a dot product. Search is exact brute force;
the pools this engine targets are small enough that approximate indexes
would only add moving parts.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import LexretError
from .ranking import RankedList

_MAGIC = b"EMB1"
_HEADER = struct.Struct("<IIB")


class EmbeddingError(LexretError):
    """Raised for malformed embedding files or invalid query vectors."""


@dataclass
class EmbeddingStore:
    """Unit-normalized embedding matrix, one row per passage handle."""

    matrix: np.ndarray  # (n, dim) float32, rows unit length
    normalized: bool = True

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def save_embeddings(matrix: np.ndarray, path: str | Path, *, normalized: bool = False) -> None:
    """Write a (n, dim) matrix in the EMB1 layout."""
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    if matrix.ndim != 2 or matrix.shape[1] == 0:
        raise EmbeddingError(f"expected a 2-d matrix with dim > 0, got shape {matrix.shape}")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(_HEADER.pack(matrix.shape[0], matrix.shape[1], 1 if normalized else 0))
        fh.write(matrix.tobytes())


def load_embeddings(path: str | Path) -> EmbeddingStore:
    """Load an EMB1 file, normalizing rows unless already flagged normalized."""
    path = Path(path)
    data = path.read_bytes()
    if data[: len(_MAGIC)] != _MAGIC:
        raise EmbeddingError(f"{path}: bad magic, not an EMB1 file")
    header_end = len(_MAGIC) + _HEADER.size
    if len(data) < header_end:
        raise EmbeddingError(f"{path}: truncated header at byte {len(data)}")
    n, dim, flag = _HEADER.unpack(data[len(_MAGIC) : header_end])
    if dim == 0:
        raise EmbeddingError(f"{path}: header declares dim 0")
    expected = header_end + n * dim * 4
    if len(data) != expected:
        raise EmbeddingError(
            f"{path}: expected {expected} bytes for n={n} dim={dim}, got {len(data)}"
            f" (truncated at byte {min(len(data), expected)})"
        )
    matrix = np.frombuffer(data, dtype="<f4", offset=header_end).reshape(n, dim).copy()
    bad = ~np.isfinite(matrix)
    if bad.any():
        row = int(np.argwhere(bad)[0][0])
        raise EmbeddingError(f"{path}: non-finite value in row {row}")
    norms = np.linalg.norm(matrix, axis=1)
    if flag:
        off_unit = np.abs(norms - 1.0) > 1e-4
        if off_unit.any():
            row = int(np.argmax(off_unit))
            raise EmbeddingError(
                f"{path}: flagged normalized but row {row} has norm {norms[row]:.6f}"
            )
    else:
        zero = norms == 0.0
        if zero.any():
            row = int(np.argmax(zero))
            raise EmbeddingError(f"{path}: row {row} is all zeros and cannot be normalized")
        matrix /= norms[:, None]
    return EmbeddingStore(matrix=matrix, normalized=True)


def top_k(store: EmbeddingStore, query_vec: np.ndarray, k: int, *, qid: str = "") -> RankedList:
    """Top-k passages by cosine similarity, ties broken by ascending handle.

    Ranking is invariant to positive rescaling of the query because the
    query is normalized before scoring.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    query_vec = np.asarray(query_vec, dtype=np.float32).reshape(-1)
    if query_vec.shape[0] != store.dim:
        raise EmbeddingError(
            f"query vector has dim {query_vec.shape[0]}, store has dim {store.dim}"
        )
    norm = float(np.linalg.norm(query_vec))
    if norm == 0.0:
        raise EmbeddingError("query vector is all zeros")
    scores = store.matrix @ (query_vec / norm)
    k = min(k, store.n)
    # lexsort uses its last key as primary: best score first, then low handle.
    order = np.lexsort((np.arange(store.n), -scores))[:k]
    return RankedList(qid=qid, entries=[(int(h), float(scores[h])) for h in order])
