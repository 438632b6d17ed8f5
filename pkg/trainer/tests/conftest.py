"""Shared trainer fixtures: a synthetic corpus and a trained memorizer.

The 50-record rewriter checkpoint is expensive (tens of seconds on CPU),
so it is trained once per session and shared by the serving and
acceptance tests.
"""

from __future__ import annotations

import json

import pytest

from lexret_trainer.data import build_sft_dataset
from lexret_trainer.train import TrainConfig, train_rewriter


def tiny_corpus(n: int):
    """Duplicate-free passages with disjoint per-record vocabularies."""
    passages = {
        f"p{i}": " ".join(f"word{i}x{j}" for j in range(8)) for i in range(n)
    }
    queries = [
        {
            "qid": f"q{i}",
            "context": " ".join(f"ctx{i}y{j}" for j in range(6)),
            "target_id": f"p{i}",
        }
        for i in range(n)
    ]
    return passages, queries


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")


MEMORIZER_CONFIG = TrainConfig.rewriter_defaults(
    epochs=120, batch_size=10, learning_rate=2e-3, seed=0,
    max_seq_len=128, log_every=100,
)


@pytest.fixture(scope="session")
def memorizer(tmp_path_factory):
    """A rewriter trained to memorize 50 records, plus its corpus."""
    passages, queries = tiny_corpus(50)
    records = build_sft_dataset(queries, passages)
    out_dir = tmp_path_factory.mktemp("memorizer")
    result = train_rewriter(MEMORIZER_CONFIG, records, out_dir)
    return {
        "checkpoint": result.checkpoint_dir,
        "passages": passages,
        "queries": queries,
        "records": records,
        "result": result,
    }
