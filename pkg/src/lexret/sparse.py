"""BM25 inverted index over the passage pool and top-k lexical search.

Scoring uses the Lucene-style idf ``ln(1 + (N - df + 0.5) / (df + 0.5))``,
which is strictly positive, with term saturation
``tf * (k1 + 1) / (tf + k1 * (1 - b + b * len / avgdl))``. Duplicated
query terms contribute once per occurrence.

The index persists to a single binary file, bit-exact across platforms:
magic ``SPIX1``, little-endian u64 doc and term counts, f64 k1 and b,
u32 doc lengths, then per term (in sorted order) a length-prefixed UTF-8
term string and its posting array of (u32 handle, u32 tf) pairs.
"""

from __future__ import annotations

import math
import struct
from bisect import bisect_left
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import LexretError
from .corpus import PassageCollection
from .ranking import RankedList
from .textproc import tokenize

_MAGIC = b"SPIX1"


class IndexFormatError(LexretError):
    """Raised for malformed index files."""


@dataclass(frozen=True)
class BM25Params:
    k1: float = 1.5
    b: float = 0.75

    def __post_init__(self):
        if self.k1 < 0:
            raise ValueError(f"k1 must be >= 0, got {self.k1}")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError(f"b must be in [0, 1], got {self.b}")


class SparseIndex:
    """Immutable inverted index; safe for concurrent searches."""

    def __init__(
        self,
        postings: dict[str, list[tuple[int, int]]],
        doc_lengths: list[int],
        params: BM25Params,
    ):
        self.postings = postings
        self.doc_lengths = doc_lengths
        self.n_docs = len(doc_lengths)
        self.avg_doc_length = sum(doc_lengths) / self.n_docs
        self.params = params
        # Per-document length normalization, fixed once per index.
        k1, b = params.k1, params.b
        self._norm = [
            k1 * (1.0 - b + b * length / self.avg_doc_length) for length in doc_lengths
        ]

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        if df == 0:
            return 0.0
        return math.log(1.0 + (self.n_docs - df + 0.5) / (df + 0.5))


def build_index(collection: PassageCollection, params: BM25Params = BM25Params()) -> SparseIndex:
    """Tokenize every passage and build the inverted index."""
    if len(collection) == 0:
        raise ValueError("cannot index an empty collection")
    postings: dict[str, list[tuple[int, int]]] = {}
    doc_lengths: list[int] = []
    for handle, passage in enumerate(collection):
        tokens = tokenize(passage.text)
        doc_lengths.append(len(tokens))
        for term, tf in Counter(tokens).items():
            postings.setdefault(term, []).append((handle, tf))
    # Postings come out sorted by handle because passages are scanned in order.
    return SparseIndex(postings=postings, doc_lengths=doc_lengths, params=params)


def score(index: SparseIndex, query: list[str], handle: int) -> float:
    """BM25 score of one passage for a tokenized query."""
    if not 0 <= handle < index.n_docs:
        raise ValueError(f"unknown passage handle {handle}")
    k1 = index.params.k1
    norm = index._norm[handle]
    total = 0.0
    for term in query:
        plist = index.postings.get(term)
        if not plist:
            continue
        pos = bisect_left(plist, (handle,))
        if pos < len(plist) and plist[pos][0] == handle:
            tf = plist[pos][1]
            total += index.idf(term) * tf * (k1 + 1.0) / (tf + norm)
    return total


def search(index: SparseIndex, query: list[str], k: int, *, qid: str = "") -> RankedList:
    """Top-k passages by BM25 score, ties broken by ascending handle.

    Passages matching no query term are omitted, so fewer than ``k``
    entries may come back.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    k1 = index.params.k1
    norm = index._norm
    scores: dict[int, float] = {}
    for term, q_count in Counter(query).items():
        plist = index.postings.get(term)
        if not plist:
            continue
        weight = index.idf(term) * q_count * (k1 + 1.0)
        for handle, tf in plist:
            scores[handle] = scores.get(handle, 0.0) + weight * tf / (tf + norm[handle])
    ranked = sorted(scores.items(), key=lambda hs: (-hs[1], hs[0]))[:k]
    return RankedList(qid=qid, entries=ranked)


def save_index(index: SparseIndex, path: str | Path) -> None:
    """Persist the index in the SPIX1 binary layout."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        terms = sorted(index.postings)
        fh.write(struct.pack("<QQ", index.n_docs, len(terms)))
        fh.write(struct.pack("<dd", index.params.k1, index.params.b))
        fh.write(np.asarray(index.doc_lengths, dtype="<u4").tobytes())
        for term in terms:
            raw = term.encode("utf-8")
            plist = index.postings[term]
            fh.write(struct.pack("<Q", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<Q", len(plist)))
            flat = np.asarray(plist, dtype="<u4")
            fh.write(flat.tobytes())


def load_index(path: str | Path) -> SparseIndex:
    """Load an index persisted by :func:`save_index`."""
    path = Path(path)
    data = path.read_bytes()
    if data[: len(_MAGIC)] != _MAGIC:
        raise IndexFormatError(f"{path}: bad magic, not a SPIX1 index")
    off = len(_MAGIC)

    def take(count: int) -> bytes:
        nonlocal off
        if off + count > len(data):
            raise IndexFormatError(f"{path}: truncated at byte {off}")
        chunk = data[off : off + count]
        off += count
        return chunk

    n_docs, n_terms = struct.unpack("<QQ", take(16))
    k1, b = struct.unpack("<dd", take(16))
    doc_lengths = np.frombuffer(take(4 * n_docs), dtype="<u4").tolist()
    postings: dict[str, list[tuple[int, int]]] = {}
    for _ in range(n_terms):
        (term_len,) = struct.unpack("<Q", take(8))
        term = take(term_len).decode("utf-8")
        (n_postings,) = struct.unpack("<Q", take(8))
        flat = np.frombuffer(take(8 * n_postings), dtype="<u4").reshape(n_postings, 2)
        plist = [(int(h), int(tf)) for h, tf in flat]
        if any(h >= n_docs for h, _ in plist):
            raise IndexFormatError(f"{path}: posting handle out of range for term {term!r}")
        postings[term] = plist
    if off != len(data):
        raise IndexFormatError(f"{path}: {len(data) - off} trailing bytes")
    return SparseIndex(postings=postings, doc_lengths=doc_lengths, params=BM25Params(k1=k1, b=b))
