"""Instruction dataset construction from the engine's JSONL corpus files."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

from . import TrainerError
from .prompts import COMPLETION_MARKER, render_instruction

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SFTRecord:
    """One rendered training record.

    ``boundary`` is the character offset where the completion (the gold
    passage) begins; the autoregressive loss still covers every token,
    the marker only supports generation-time splitting and evaluation.
    """

    qid: str
    prompt: str
    boundary: int

    def completion(self) -> str:
        return self.prompt[self.boundary:]


def read_jsonl(path: str | Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    return records


def load_passage_texts(path: str | Path) -> dict[str, str]:
    """id -> text map from an engine passages file."""
    out = {}
    for record in read_jsonl(path):
        out[str(record["id"])] = str(record["text"])
    return out


def build_sft_dataset(
    queries: list[dict], passage_texts: dict[str, str]
) -> list[SFTRecord]:
    """One record per query, in input order.

    Queries whose target id does not resolve are skipped and reported.
    """
    records = []
    skipped = []
    for query in queries:
        target = str(query["target_id"])
        if target not in passage_texts:
            skipped.append(str(query["qid"]))
            continue
        passage = passage_texts[target]
        prompt = render_instruction(str(query["context"]), passage)
        boundary = prompt.index(COMPLETION_MARKER) + len(COMPLETION_MARKER) + 1
        records.append(SFTRecord(qid=str(query["qid"]), prompt=prompt, boundary=boundary))
    if skipped:
        logger.warning("skipped %d queries with unresolvable targets: %s",
                       len(skipped), ", ".join(skipped[:10]))
    return records


def build_sft_dataset_from_files(
    queries_path: str | Path, passages_path: str | Path
) -> list[SFTRecord]:
    return build_sft_dataset(read_jsonl(queries_path), load_passage_texts(passages_path))


def dataset_fingerprint(records: list[SFTRecord]) -> str:
    """Stable hash over the rendered records, for reproducibility checks."""
    digest = hashlib.sha256()
    for record in records:
        digest.update(record.qid.encode("utf-8"))
        digest.update(b"\x00")
        digest.update(record.prompt.encode("utf-8"))
        digest.update(b"\x01")
    return digest.hexdigest()


def save_sft_dataset(records: list[SFTRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(
                {"qid": record.qid, "prompt": record.prompt, "boundary": record.boundary},
                ensure_ascii=False,
            ) + "\n")


def load_sft_dataset(path: str | Path) -> list[SFTRecord]:
    records = []
    for obj in read_jsonl(path):
        record = SFTRecord(qid=obj["qid"], prompt=obj["prompt"], boundary=obj["boundary"])
        if not record.prompt:
            raise TrainerError(f"empty prompt for record {record.qid!r}")
        records.append(record)
    return records
