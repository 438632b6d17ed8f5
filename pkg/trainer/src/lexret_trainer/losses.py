"""Training objectives: autoregressive cross entropy, in-batch softmax
ranking, and margin-based contrastive loss."""

from __future__ import annotations

import torch
import torch.nn.functional as F


def sft_loss(token_logprobs: torch.Tensor, reduction: str = "sum") -> torch.Tensor:
    """Negative log likelihood of a token sequence.

    ``reduction='sum'`` is the sequence loss; ``'mean'`` is the
    per-token variant reported alongside it in training logs.
    """
    if not torch.isfinite(token_logprobs).all():
        raise ValueError("non-finite log-probabilities")
    if reduction == "sum":
        return -token_logprobs.sum()
    if reduction == "mean":
        return -token_logprobs.mean()
    raise ValueError(f"unknown reduction {reduction!r}")


def sft_loss_from_logits(logits: torch.Tensor, targets: torch.Tensor,
                         reduction: str = "sum") -> torch.Tensor:
    """Cross entropy over a (T, V) logits matrix and its (T,) targets."""
    logprobs = F.log_softmax(logits, dim=-1)
    picked = logprobs.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    return sft_loss(picked, reduction=reduction)


def mnrl_loss(sim_matrix: torch.Tensor) -> torch.Tensor:
    """In-batch ranking loss over a square similarity matrix.

    Row i scores query i against every passage in the batch; the
    diagonal holds the positives and every other column acts as a
    negative. Returns the mean over rows of the softmax cross entropy
    against the diagonal.
    """
    if sim_matrix.ndim != 2 or sim_matrix.shape[0] != sim_matrix.shape[1]:
        raise ValueError(f"similarity matrix must be square, got {tuple(sim_matrix.shape)}")
    logprobs = F.log_softmax(sim_matrix, dim=1)
    return -logprobs.diagonal().mean()


def contrastive_loss(distance, label, margin) -> torch.Tensor:
    """Margin loss over a query/passage distance.

    Positives (label 1) are pulled to zero distance; negatives (label 0)
    are pushed beyond the margin, contributing nothing once past it.
    Both branches meet at zero when distance equals the margin.
    """
    distance = torch.as_tensor(distance, dtype=torch.float64)
    label = torch.as_tensor(label, dtype=torch.float64)
    if (distance < 0).any():
        raise ValueError("distance must be >= 0")
    if margin <= 0:
        raise ValueError(f"margin must be > 0, got {margin}")
    hinge = torch.clamp(margin - distance, min=0.0)
    return 0.5 * (label * distance**2 + (1.0 - label) * hinge**2)
