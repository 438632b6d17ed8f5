"""Passage pool and query loading, splits, and citation-frequency statistics.

Canonical on-disk form is JSONL: one object per line with fields ``id``
and ``text`` for passages, ``qid``, ``context`` and ``target_id`` for
queries. A CSV adapter with configurable column names handles other
distributions of the same data. Field names beyond these are carried
through opaquely and re-emitted on save, never interpreted.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from . import LexretError

logger = logging.getLogger(__name__)


class CorpusError(LexretError):
    """Raised for malformed or inconsistent passage/query data."""


@dataclass(frozen=True)
class Passage:
    """A candidate passage with its corpus-unique identifier."""

    id: str
    text: str
    meta: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class QueryRecord:
    """An ongoing context paired with the id of its gold target passage."""

    qid: str
    context: str
    target_id: str
    target_handle: int
    meta: dict = field(default_factory=dict, compare=False)


class PassageCollection:
    """Ordered, immutable pool of passages with dense integer handles.

    Handle ``k`` refers to the k-th passage in insertion order and never
    changes after construction.
    """

    def __init__(self, passages: list[Passage]):
        self.passages = list(passages)
        self.id_index: dict[str, int] = {}
        for handle, passage in enumerate(self.passages):
            if not passage.text.strip():
                raise CorpusError(f"passage {passage.id!r} has empty text")
            if passage.id in self.id_index:
                raise CorpusError(f"duplicate passage id {passage.id!r}")
            self.id_index[passage.id] = handle

    def __len__(self) -> int:
        return len(self.passages)

    def __getitem__(self, handle: int) -> Passage:
        return self.passages[handle]

    def __iter__(self):
        return iter(self.passages)

    def handle(self, passage_id: str) -> int:
        return self.id_index[passage_id]

    def texts(self) -> list[str]:
        return [p.text for p in self.passages]


@dataclass
class FrequencyTable:
    """Citation counts per passage handle over a query set."""

    counts: dict[int, int]
    total: int

    def __post_init__(self):
        if self.total != sum(self.counts.values()):
            raise CorpusError("frequency table total does not match counts")
        if any(c < 1 for c in self.counts.values()):
            raise CorpusError("frequency table contains non-positive counts")


def _iter_records(path: Path, fmt: str):
    """Yield (line_number, record_dict) from a JSONL or CSV file."""
    try:
        if fmt == "jsonl":
            with open(path, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, start=1):
                    if not line.strip():
                        continue
                    try:
                        record = json.loads(line)
                    except json.JSONDecodeError as exc:
                        raise CorpusError(f"{path}: line {lineno}: invalid JSON: {exc}") from exc
                    yield lineno, record
        elif fmt == "csv":
            with open(path, encoding="utf-8", newline="") as fh:
                reader = csv.DictReader(fh)
                # DictReader consumes the header, so data starts at line 2.
                for lineno, record in enumerate(reader, start=2):
                    yield lineno, record
        else:
            raise CorpusError(f"unknown format {fmt!r}, expected 'jsonl' or 'csv'")
    except UnicodeDecodeError as exc:
        raise CorpusError(f"{path}: not valid UTF-8: {exc}") from exc


def load_passages(
    path: str | Path,
    fmt: str = "jsonl",
    *,
    id_field: str = "id",
    text_field: str = "text",
) -> PassageCollection:
    """Load the passage pool, preserving insertion order.

    Duplicate ids, missing fields, and empty texts are rejected with the
    offending id or line number.
    """
    path = Path(path)
    passages: list[Passage] = []
    seen: dict[str, int] = {}
    for lineno, record in _iter_records(path, fmt):
        if id_field not in record or record[id_field] in (None, ""):
            raise CorpusError(f"{path}: line {lineno}: missing field {id_field!r}")
        if text_field not in record or record[text_field] is None:
            raise CorpusError(f"{path}: line {lineno}: missing field {text_field!r}")
        pid = str(record[id_field])
        text = str(record[text_field])
        if not text.strip():
            raise CorpusError(f"{path}: line {lineno}: passage {pid!r} has empty text")
        if pid in seen:
            raise CorpusError(
                f"{path}: line {lineno}: duplicate passage id {pid!r} (first seen on line {seen[pid]})"
            )
        seen[pid] = lineno
        meta = {k: v for k, v in record.items() if k not in (id_field, text_field)}
        passages.append(Passage(id=pid, text=text, meta=meta))
    return PassageCollection(passages)


def save_passages(collection: PassageCollection, path: str | Path) -> None:
    """Write a collection back to canonical JSONL, retaining opaque metadata."""
    with open(path, "w", encoding="utf-8") as fh:
        for passage in collection:
            record = {"id": passage.id, "text": passage.text, **passage.meta}
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_queries(
    path: str | Path,
    collection: PassageCollection,
    fmt: str = "jsonl",
    *,
    strict: bool = True,
    qid_field: str = "qid",
    context_field: str = "context",
    target_field: str = "target_id",
) -> list[QueryRecord]:
    """Load query records and resolve each target against ``collection``.

    In strict mode any unresolvable target aborts the load with an error
    listing the offending qids. In lenient mode those records are skipped
    and reported through the module logger.
    """
    path = Path(path)
    records: list[QueryRecord] = []
    unresolved: list[str] = []
    seen_qids: set[str] = set()
    for lineno, record in _iter_records(path, fmt):
        for fname in (qid_field, context_field, target_field):
            if fname not in record or record[fname] in (None, ""):
                raise CorpusError(f"{path}: line {lineno}: missing field {fname!r}")
        qid = str(record[qid_field])
        context = str(record[context_field])
        target_id = str(record[target_field])
        if not context.strip():
            raise CorpusError(f"{path}: line {lineno}: query {qid!r} has empty context")
        if qid in seen_qids:
            raise CorpusError(f"{path}: line {lineno}: duplicate qid {qid!r}")
        seen_qids.add(qid)
        if target_id not in collection.id_index:
            unresolved.append(qid)
            continue
        meta = {
            k: v for k, v in record.items() if k not in (qid_field, context_field, target_field)
        }
        records.append(
            QueryRecord(
                qid=qid,
                context=context,
                target_id=target_id,
                target_handle=collection.handle(target_id),
                meta=meta,
            )
        )
    if unresolved:
        if strict:
            raise CorpusError(
                f"{path}: {len(unresolved)} queries with unresolvable targets: "
                + ", ".join(unresolved)
            )
        logger.warning(
            "%s: skipped %d queries with unresolvable targets: %s",
            path,
            len(unresolved),
            ", ".join(unresolved),
        )
    return records


def save_queries(records: list[QueryRecord], path: str | Path) -> None:
    """Write query records to canonical JSONL."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = {"qid": rec.qid, "context": rec.context, "target_id": rec.target_id, **rec.meta}
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def split_queries(
    queries: list[QueryRecord], train_fraction: float, seed: int
) -> tuple[list[QueryRecord], list[QueryRecord]]:
    """Deterministically partition queries into train and test sets.

    Sizes are ``floor(n * train_fraction)`` and the remainder. The same
    (queries, fraction, seed) always yields the same partition.
    """
    if not queries:
        raise CorpusError("cannot split an empty query list")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    order = list(range(len(queries)))
    random.Random(seed).shuffle(order)
    n_train = math.floor(len(queries) * train_fraction)
    train = [queries[i] for i in order[:n_train]]
    test = [queries[i] for i in order[n_train:]]
    return train, test


def citation_frequency(queries: list[QueryRecord]) -> FrequencyTable:
    """Count how often each passage handle appears as a query target."""
    counts = Counter(q.target_handle for q in queries)
    return FrequencyTable(counts=dict(counts), total=len(queries))


def top_share(table: FrequencyTable, fraction: float) -> float:
    """Share of total citations captured by the top ``fraction`` of passages.

    Distinct passages are ranked by count descending with ties broken by
    ascending handle; the top ``ceil(fraction * n_distinct)`` are kept.
    The ceiling means fraction 0.01 over 10,000 distinct passages selects
    exactly 100.
    """
    if not table.counts:
        raise CorpusError("top_share of an empty frequency table")
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    ranked = sorted(table.counts.items(), key=lambda kv: (-kv[1], kv[0]))
    take = math.ceil(fraction * len(ranked))
    mass = sum(count for _, count in ranked[:take])
    return mass / table.total
