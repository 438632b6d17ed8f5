"""Tiny causal transformer and low-rank adapters.

``base_model="tiny"`` resolves to this architecture with a seeded random
initialization; it stands in for the multi-billion-parameter backbones
at desk scale, so tests exercise mechanism (loss behavior, memorization,
format contracts) rather than leaderboard numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn
import torch.nn.functional as F

from .tokenizer import EOS


@dataclass(frozen=True)
class ModelSpec:
    vocab_size: int
    d_model: int = 128
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 256
    max_len: int = 256


class Block(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.ln1 = nn.LayerNorm(spec.d_model)
        self.attn_qkv = nn.Linear(spec.d_model, 3 * spec.d_model)
        self.attn_out = nn.Linear(spec.d_model, spec.d_model)
        self.ln2 = nn.LayerNorm(spec.d_model)
        self.mlp_in = nn.Linear(spec.d_model, spec.d_ff)
        self.mlp_out = nn.Linear(spec.d_ff, spec.d_model)
        self.n_heads = spec.n_heads

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        h = self.ln1(x)
        qkv = self.attn_qkv(h).view(b, t, 3, self.n_heads, d // self.n_heads)
        q, k, v = (qkv[:, :, i].transpose(1, 2) for i in range(3))
        attn = F.scaled_dot_product_attention(q, k, v, is_causal=True)
        x = x + self.attn_out(attn.transpose(1, 2).reshape(b, t, d))
        h = self.ln2(x)
        return x + self.mlp_out(F.gelu(self.mlp_in(h)))


class TinyCausalLM(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        self.tok_emb = nn.Embedding(spec.vocab_size, spec.d_model)
        self.pos_emb = nn.Embedding(spec.max_len, spec.d_model)
        self.blocks = nn.ModuleList(Block(spec) for _ in range(spec.n_layers))
        self.ln_f = nn.LayerNorm(spec.d_model)
        self.head = nn.Linear(spec.d_model, spec.vocab_size, bias=False)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        if ids.shape[1] > self.spec.max_len:
            raise ValueError(
                f"sequence length {ids.shape[1]} exceeds max_len {self.spec.max_len}"
            )
        pos = torch.arange(ids.shape[1], device=ids.device)
        x = self.tok_emb(ids) + self.pos_emb(pos)[None]
        for block in self.blocks:
            x = block(x)
        return self.head(self.ln_f(x))


def build_model(spec: ModelSpec, seed: int) -> TinyCausalLM:
    """Seeded random initialization, reproducible across runs."""
    generator_state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    model = TinyCausalLM(spec)
    torch.random.set_rng_state(generator_state)
    return model


class LoRALinear(nn.Module):
    """Frozen linear layer with a trainable low-rank update.

    The delta ``B @ A`` starts at zero (B zero-initialized), so wrapping
    never changes the base model's function until training moves B.
    """

    def __init__(self, base: nn.Linear, rank: int, alpha: float | None = None):
        super().__init__()
        if rank < 1:
            raise ValueError(f"rank must be >= 1, got {rank}")
        self.base = base
        for param in self.base.parameters():
            param.requires_grad_(False)
        self.rank = rank
        self.scaling = (alpha if alpha is not None else float(rank)) / rank
        self.lora_a = nn.Parameter(torch.empty(rank, base.in_features))
        self.lora_b = nn.Parameter(torch.zeros(base.out_features, rank))
        nn.init.kaiming_uniform_(self.lora_a, a=math.sqrt(5))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + self.scaling * F.linear(F.linear(x, self.lora_a), self.lora_b)


def apply_lora(model: TinyCausalLM, rank: int, *, train_embeddings: bool = True) -> None:
    """Wrap every attention and MLP linear with adapters.

    With a randomly initialized base the embeddings, head, and norms
    stay trainable by default (there is no pretrained geometry worth
    freezing); adapters alone carry the rest.
    """
    for block in model.blocks:
        block.attn_qkv = LoRALinear(block.attn_qkv, rank)
        block.attn_out = LoRALinear(block.attn_out, rank)
        block.mlp_in = LoRALinear(block.mlp_in, rank)
        block.mlp_out = LoRALinear(block.mlp_out, rank)
    if not train_embeddings:
        model.tok_emb.weight.requires_grad_(False)
        model.pos_emb.weight.requires_grad_(False)
        model.head.weight.requires_grad_(False)


@torch.no_grad()
def generate(
    model: TinyCausalLM,
    prompt_ids: list[int],
    *,
    max_new_tokens: int = 64,
    temperature: float = 0.0,
    top_p: float = 0.9,
    seed: int = 0,
) -> list[int]:
    """Autoregressive decoding; temperature 0 is greedy argmax."""
    model.eval()
    ids = list(prompt_ids)
    rng = torch.Generator().manual_seed(seed)
    out: list[int] = []
    for _ in range(max_new_tokens):
        window = ids[-model.spec.max_len:]
        logits = model(torch.tensor([window]))[0, -1]
        if temperature <= 0.0:
            next_id = int(logits.argmax())
        else:
            probs = F.softmax(logits / temperature, dim=-1)
            sorted_probs, sorted_ids = probs.sort(descending=True)
            keep = sorted_probs.cumsum(0) - sorted_probs < top_p
            keep[0] = True
            filtered = sorted_probs * keep
            pick = torch.multinomial(filtered / filtered.sum(), 1, generator=rng)
            next_id = int(sorted_ids[pick])
        if next_id == EOS:
            break
        out.append(next_id)
        ids.append(next_id)
    return out
