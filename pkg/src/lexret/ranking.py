"""Ranked retrieval results and TREC-style run files.

A run file has one line per entry::

    qid Q0 passage_id rank score run_name

Scores are written with full float precision (``repr``) so a rerun with
identical inputs produces byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from . import LexretError
from .corpus import PassageCollection


class RunFileError(LexretError):
    """Raised for malformed run files."""


@dataclass
class RankedList:
    """Ordered (passage handle, score) results for one query."""

    qid: str
    entries: list[tuple[int, float]] = field(default_factory=list)

    def __post_init__(self):
        handles = [h for h, _ in self.entries]
        if len(set(handles)) != len(handles):
            raise ValueError(f"ranked list for {self.qid!r} repeats a handle")
        scores = [s for _, s in self.entries]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError(f"ranked list for {self.qid!r} has increasing scores")

    def handles(self) -> list[int]:
        return [h for h, _ in self.entries]

    def rank_of(self, handle: int) -> int | None:
        """1-based rank of ``handle``, or None if absent."""
        for rank, (h, _) in enumerate(self.entries, start=1):
            if h == handle:
                return rank
        return None


@dataclass
class RetrievalRun:
    """A named set of ranked lists, one per query. The unit of evaluation."""

    name: str
    lists: dict[str, RankedList] = field(default_factory=dict)

    def add(self, ranked: RankedList) -> None:
        if ranked.qid in self.lists:
            raise ValueError(f"run {self.name!r} already has qid {ranked.qid!r}")
        self.lists[ranked.qid] = ranked


def write_run(run: RetrievalRun, collection: PassageCollection, path: str | Path) -> None:
    """Write a run in TREC format, mapping handles back to passage ids."""
    with open(path, "w", encoding="utf-8") as fh:
        for qid in run.lists:
            for rank, (handle, score) in enumerate(run.lists[qid].entries, start=1):
                pid = collection[handle].id
                fh.write(f"{qid} Q0 {pid} {rank} {score!r} {run.name}\n")


def read_run(path: str | Path, collection: PassageCollection) -> RetrievalRun:
    """Read a TREC-format run file, resolving passage ids to handles."""
    path = Path(path)
    name = None
    per_qid: dict[str, list[tuple[int, float]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 6:
                raise RunFileError(f"{path}: line {lineno}: expected 6 fields, got {len(parts)}")
            qid, _, pid, rank, score, run_name = parts
            if name is None:
                name = run_name
            if pid not in collection.id_index:
                raise RunFileError(f"{path}: line {lineno}: unknown passage id {pid!r}")
            per_qid.setdefault(qid, []).append((int(rank), collection.handle(pid), float(score)))
    run = RetrievalRun(name=name or path.stem)
    for qid, rows in per_qid.items():
        rows.sort(key=lambda r: r[0])
        run.add(RankedList(qid=qid, entries=[(h, s) for _, h, s in rows]))
    return run
