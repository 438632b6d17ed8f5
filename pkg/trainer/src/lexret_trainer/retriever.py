"""Retriever-side training and embedding export.

The desk-scale encoder is a mean-pooled word embedding followed by a
projection, unit-normalized so similarity is cosine. Training supports
the in-batch ranking objective over (query, positive) pairs and the
margin-based contrastive objective over (query, passage, label) triples
built from hard negatives mined out of the engine's run files.

Exported embeddings use the engine's binary contract: magic ``EMB1``,
little-endian u32 count and dimension, u8 normalized flag, then float32
rows in passage handle order.
"""

from __future__ import annotations

import logging
import random
import struct
from pathlib import Path

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from . import TrainerError
from .losses import contrastive_loss, mnrl_loss
from .tokenizer import WordTokenizer
from .train import TrainConfig

logger = logging.getLogger(__name__)

# Cosine similarities are scaled before the in-batch softmax; without a
# scale the loss saturates long before the geometry separates.
SIMILARITY_SCALE = 20.0


class TextEncoder(nn.Module):
    """Mean-of-words encoder with unit-length outputs."""

    def __init__(self, tokenizer: WordTokenizer, dim: int = 64, seed: int = 0):
        super().__init__()
        self.tokenizer = tokenizer
        state = torch.random.get_rng_state()
        torch.manual_seed(seed)
        self.embedding = nn.EmbeddingBag(tokenizer.vocab_size, dim, mode="mean")
        self.project = nn.Linear(dim, dim)
        torch.random.set_rng_state(state)

    def forward(self, texts: list[str]) -> torch.Tensor:
        flat: list[int] = []
        offsets = []
        for text in texts:
            offsets.append(len(flat))
            ids = self.tokenizer.encode(text)
            flat.extend(ids if ids else [0])
        pooled = self.embedding(torch.tensor(flat), torch.tensor(offsets))
        return F.normalize(self.project(pooled), dim=1)

    @torch.no_grad()
    def encode(self, texts: list[str], batch_size: int = 256) -> np.ndarray:
        self.eval()
        rows = []
        for start in range(0, len(texts), batch_size):
            rows.append(self(texts[start : start + batch_size]).numpy())
        return np.concatenate(rows, axis=0)


def train_retriever_mnrl(
    config: TrainConfig, pairs: list[tuple[str, str]], *, tokenizer: WordTokenizer | None = None
) -> tuple[TextEncoder, list[float]]:
    """Fit the encoder on (query, positive passage) pairs with in-batch
    negatives. Returns the encoder and the per-epoch mean loss curve."""
    if not pairs:
        raise TrainerError("no training pairs")
    if tokenizer is None:
        tokenizer = WordTokenizer.from_texts(t for pair in pairs for t in pair)
    encoder = TextEncoder(tokenizer, dim=config.embedding_dim, seed=config.seed)
    optimizer = torch.optim.AdamW(encoder.parameters(), lr=config.learning_rate)
    rng = random.Random(config.seed)
    curve = []
    encoder.train()
    for _ in range(config.epochs):
        order = list(range(len(pairs)))
        rng.shuffle(order)
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [pairs[i] for i in order[start : start + config.batch_size]]
            if len(batch) < 2:
                continue
            queries = encoder([q for q, _ in batch])
            passages = encoder([p for _, p in batch])
            loss = mnrl_loss(SIMILARITY_SCALE * queries @ passages.T)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_losses.append(float(loss.detach()))
        curve.append(sum(epoch_losses) / len(epoch_losses))
    return encoder, curve


def train_retriever_contrastive(
    config: TrainConfig,
    triples: list[tuple[str, str, int]],
    *,
    tokenizer: WordTokenizer | None = None,
) -> tuple[TextEncoder, list[float]]:
    """Fit the encoder on (query, passage, label) triples.

    Distance is euclidean between unit vectors; labels are 1 for the
    gold passage and 0 for a hard negative.
    """
    if not triples:
        raise TrainerError("no training triples")
    if tokenizer is None:
        tokenizer = WordTokenizer.from_texts(t for q, p, _ in triples for t in (q, p))
    encoder = TextEncoder(tokenizer, dim=config.embedding_dim, seed=config.seed)
    optimizer = torch.optim.AdamW(encoder.parameters(), lr=config.learning_rate)
    rng = random.Random(config.seed)
    curve = []
    encoder.train()
    for _ in range(config.epochs):
        order = list(range(len(triples)))
        rng.shuffle(order)
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [triples[i] for i in order[start : start + config.batch_size]]
            queries = encoder([q for q, _, _ in batch])
            passages = encoder([p for _, p, _ in batch])
            distance = (queries - passages).norm(dim=1)
            labels = torch.tensor([float(y) for _, _, y in batch])
            loss = contrastive_loss(distance, labels, config.margin).mean()
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_losses.append(float(loss.detach()))
        curve.append(sum(epoch_losses) / len(epoch_losses))
    return encoder, curve


def hard_negative_triples(
    run_path: str | Path,
    queries: list[dict],
    passage_texts: dict[str, str],
) -> list[tuple[str, str, int]]:
    """Build contrastive triples from a TREC run file.

    Each query contributes a positive (its gold passage) and one hard
    negative: the highest-ranked run entry that is not the gold passage.
    """
    best_non_gold: dict[str, str] = {}
    gold_by_qid = {str(q["qid"]): str(q["target_id"]) for q in queries}
    with open(run_path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if len(parts) != 6:
                continue
            qid, _, pid, rank, _, _ = parts
            if qid in best_non_gold or qid not in gold_by_qid:
                continue
            if pid != gold_by_qid[qid]:
                best_non_gold[qid] = pid
    triples = []
    for query in queries:
        qid = str(query["qid"])
        context = str(query["context"])
        gold = gold_by_qid[qid]
        if gold in passage_texts:
            triples.append((context, passage_texts[gold], 1))
        if qid in best_non_gold:
            triples.append((context, passage_texts[best_non_gold[qid]], 0))
    return triples


def write_embedding_file(matrix: np.ndarray, out_path: str | Path) -> None:
    """Write rows in the engine's EMB1 binary layout, flagged normalized."""
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    norms = np.linalg.norm(matrix, axis=1)
    if not np.allclose(norms, 1.0, atol=1e-4):
        raise TrainerError("embedding rows must be unit length before export")
    with open(out_path, "wb") as fh:
        fh.write(b"EMB1")
        fh.write(struct.pack("<IIB", matrix.shape[0], matrix.shape[1], 1))
        fh.write(matrix.tobytes())


def export_embeddings(
    encoder: TextEncoder, passages: list[tuple[str, str]], out_path: str | Path
) -> int:
    """Encode passages in handle order and write the embedding file.

    ``passages`` is the (id, text) list in engine load order; the row
    index of the output equals the passage handle.
    """
    texts = [text for _, text in passages]
    matrix = encoder.encode(texts)
    expected_dim = encoder.project.out_features
    if matrix.shape != (len(texts), expected_dim):
        raise TrainerError(
            f"encoder produced shape {matrix.shape}, expected {(len(texts), expected_dim)}"
        )
    write_embedding_file(matrix, out_path)
    return matrix.shape[0]
