"""Rewriter fine-tuning: instruction records in, adapter checkpoint out.

The checkpoint directory holds everything needed to reload and serve the
model: config.json (model spec, train config, step counter), the
tokenizer vocabulary, the full weight state (base plus adapters), and a
training-loss curve CSV. Resuming from a checkpoint restores weights,
optimizer state, and the step counter.
"""

from __future__ import annotations

import json
import logging
import math
import random
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
import torch.nn.functional as F

from . import TrainerError
from .data import SFTRecord
from .model import ModelSpec, TinyCausalLM, apply_lora, build_model
from .tokenizer import PAD, WordTokenizer

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Hyperparameters for both training sides.

    Rewriter defaults: LoRA rank 64, cosine schedule, AdamW, 1 epoch,
    per-device batch 4, lr 5e-5. Retriever defaults: batch 32, 3 epochs,
    max length 256, warm-up ratio 0.1, in-batch ranking loss.
    """

    base_model: str = "tiny"
    adapter_rank: int = 64
    learning_rate: float = 5e-5
    schedule: str = "cosine"
    epochs: int = 1
    batch_size: int = 4
    seed: int = 0
    max_seq_len: int = 1024
    warmup_ratio: float = 0.0
    train_embeddings: bool = True
    loss: str = "mnrl"
    margin: float = 1.0
    embedding_dim: int = 64
    d_model: int = 128
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 256
    log_every: int = 10

    @classmethod
    def rewriter_defaults(cls, **overrides) -> "TrainConfig":
        return cls(**overrides)

    @classmethod
    def retriever_defaults(cls, **overrides) -> "TrainConfig":
        values = dict(batch_size=32, epochs=3, max_seq_len=256, warmup_ratio=0.1,
                      loss="mnrl")
        values.update(overrides)
        return cls(**values)


@dataclass
class TrainResult:
    checkpoint_dir: Path
    steps: int
    loss_curve: list[dict] = field(default_factory=list)
    train_seconds: float = 0.0


def _lr_at(step: int, total_steps: int, config: TrainConfig) -> float:
    warmup = int(config.warmup_ratio * total_steps)
    if warmup and step < warmup:
        return config.learning_rate * (step + 1) / warmup
    if config.schedule == "cosine":
        progress = (step - warmup) / max(1, total_steps - warmup)
        return config.learning_rate * 0.5 * (1.0 + math.cos(math.pi * min(progress, 1.0)))
    return config.learning_rate


def _batches(order: list[int], batch_size: int):
    for start in range(0, len(order), batch_size):
        yield order[start : start + batch_size]


def train_rewriter(
    config: TrainConfig,
    records: list[SFTRecord],
    out_dir: str | Path,
    *,
    resume_from: str | Path | None = None,
) -> TrainResult:
    """Fine-tune the rewriter on instruction records.

    The loss is autoregressive cross entropy over every token of each
    record (next-token prediction), logged as the per-token mean. Runs
    are deterministic given the config seed.
    """
    if not records:
        raise TrainerError("no training records")
    if config.base_model != "tiny":
        raise TrainerError(
            f"unknown base model {config.base_model!r}; this environment builds "
            "the in-repo tiny model only"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    wall_start = time.monotonic()
    torch.manual_seed(config.seed)
    start_step = 0
    if resume_from is not None:
        model, tokenizer, meta = load_checkpoint(resume_from)
        start_step = meta["steps"]
        spec = model.spec
    else:
        tokenizer = WordTokenizer.from_texts(record.prompt for record in records)
        spec = ModelSpec(
            vocab_size=tokenizer.vocab_size,
            d_model=config.d_model,
            n_heads=config.n_heads,
            n_layers=config.n_layers,
            d_ff=config.d_ff,
            max_len=config.max_seq_len,
        )
        model = build_model(spec, config.seed)
        apply_lora(model, config.adapter_rank, train_embeddings=config.train_embeddings)

    encoded = []
    for record in records:
        ids = tokenizer.encode(record.prompt, add_bos=True, add_eos=True)
        if len(ids) > spec.max_len:
            raise TrainerError(
                f"record {record.qid!r} has {len(ids)} tokens, max_seq_len is {spec.max_len}"
            )
        encoded.append(ids)

    trainable = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.AdamW(trainable, lr=config.learning_rate)
    if resume_from is not None:
        state_path = Path(resume_from) / "optimizer.pt"
        if state_path.exists():
            optimizer.load_state_dict(torch.load(state_path, weights_only=False))

    n_batches = math.ceil(len(encoded) / config.batch_size)
    total_steps = config.epochs * n_batches
    rng = random.Random(config.seed)
    curve: list[dict] = []
    step = start_step
    model.train()
    for epoch in range(config.epochs):
        order = list(range(len(encoded)))
        rng.shuffle(order)
        for batch_indices in _batches(order, config.batch_size):
            for group in optimizer.param_groups:
                group["lr"] = _lr_at(step - start_step, total_steps, config)
            optimizer.zero_grad()
            seqs = [encoded[i] for i in batch_indices]
            width = max(len(s) for s in seqs)
            ids = torch.full((len(seqs), width), PAD, dtype=torch.long)
            for row, seq in enumerate(seqs):
                ids[row, : len(seq)] = torch.tensor(seq)
            # Right padding keeps real positions causal-clean; pad targets
            # are masked out of the loss.
            logits = model(ids[:, :-1])
            targets = ids[:, 1:]
            mask = targets != PAD
            logprobs = F.log_softmax(logits, dim=-1)
            picked = logprobs.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
            batch_loss = -(picked * mask).sum()
            n_tokens = int(mask.sum())
            (batch_loss / n_tokens).backward()
            optimizer.step()
            step += 1
            if step % config.log_every == 0 or step == start_step + total_steps:
                per_token = float(batch_loss.detach()) / n_tokens
                curve.append({"step": step, "epoch": epoch,
                              "loss_sum": float(batch_loss.detach()),
                              "loss_per_token": per_token})
                logger.info("step %d: loss/token %.4f", step, per_token)

    save_checkpoint(out_dir, model, tokenizer, config, step)
    torch.save(optimizer.state_dict(), out_dir / "optimizer.pt")
    curve_path = out_dir / "loss_curve.csv"
    mode = "a" if resume_from is not None and curve_path.exists() else "w"
    with open(curve_path, mode, encoding="utf-8") as fh:
        if mode == "w":
            fh.write("step,epoch,loss_sum,loss_per_token\n")
        for row in curve:
            fh.write(f"{row['step']},{row['epoch']},{row['loss_sum']!r},{row['loss_per_token']!r}\n")
    return TrainResult(
        checkpoint_dir=out_dir,
        steps=step,
        loss_curve=curve,
        train_seconds=time.monotonic() - wall_start,
    )


def save_checkpoint(out_dir: str | Path, model: TinyCausalLM,
                    tokenizer: WordTokenizer, config: TrainConfig, steps: int) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {
        "model_spec": asdict(model.spec),
        "train_config": asdict(config),
        "steps": steps,
        "lora_rank": config.adapter_rank,
    }
    (out_dir / "config.json").write_text(json.dumps(meta, indent=2))
    tokenizer.save(out_dir / "tokenizer.json")
    torch.save(model.state_dict(), out_dir / "weights.pt")


def load_checkpoint(path: str | Path) -> tuple[TinyCausalLM, WordTokenizer, dict]:
    path = Path(path)
    meta = json.loads((path / "config.json").read_text())
    spec = ModelSpec(**meta["model_spec"])
    tokenizer = WordTokenizer.load(path / "tokenizer.json")
    model = TinyCausalLM(spec)
    train_config = meta["train_config"]
    apply_lora(model, meta["lora_rank"],
               train_embeddings=train_config.get("train_embeddings", True))
    state = torch.load(path / "weights.pt", weights_only=True)
    model.load_state_dict(state)
    model.eval()
    return model, tokenizer, meta
