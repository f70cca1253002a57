"""Self-supervised training objectives.

Two branches come out of the shared network: embeddings of the distorted
original view and embeddings of the jigsaw-shuffled view.  Their empirical
cross-correlation matrix is driven toward the identity (invariance on the
diagonal, redundancy reduction off it), while per-step classifiers predict
the jigsaw order label with cross-entropy.

All functions are differentiable torch ops and dtype-preserving, so tests
can run them in float64 against high-precision references.
"""

from __future__ import annotations

from typing import Sequence

import torch
import torch.nn.functional as F

from .errors import BatchTooSmall, LabelError, ShapeError

NORM_EPS = 1e-12


def batch_normalize(z: torch.Tensor, eps: float = NORM_EPS) -> torch.Tensor:
    """Whiten each embedding dimension to batch mean 0 and std 1.

    Uses the population (1/B) standard deviation with ``eps`` added to the
    divisor, so a constant dimension comes out as exact zeros instead of NaN.
    """
    if z.ndim != 2:
        raise ShapeError(f"expected a B x D embedding batch, got shape {tuple(z.shape)}")
    if z.shape[0] < 2:
        raise BatchTooSmall(f"batch statistics need B >= 2, got B={z.shape[0]}")
    mean = z.mean(dim=0, keepdim=True)
    std = z.std(dim=0, unbiased=False, keepdim=True)
    return (z - mean) / (std + eps)


def degenerate_dims(z: torch.Tensor) -> int:
    """Number of constant (zero-variance) embedding dimensions in the batch."""
    return int((z.std(dim=0, unbiased=False) == 0).sum().item())


def cross_correlation(za: torch.Tensor, zb: torch.Tensor) -> torch.Tensor:
    """Empirical D x D cross-correlation between two embedding batches.

    ``C = normalize(za)^T @ normalize(zb) / B``; entries are Pearson
    correlations between dimension i of the distorted branch and dimension j
    of the jigsaw branch, so they lie in [-1, 1] up to rounding.
    """
    if za.shape != zb.shape:
        raise ShapeError(f"branch shapes differ: {tuple(za.shape)} vs {tuple(zb.shape)}")
    if za.ndim != 2:
        raise ShapeError(f"expected B x D embedding batches, got shape {tuple(za.shape)}")
    if za.shape[0] < 2:
        raise BatchTooSmall(f"cross-correlation needs B >= 2, got B={za.shape[0]}")
    b = za.shape[0]
    return batch_normalize(za).T @ batch_normalize(zb) / b


def barlow_loss(c: torch.Tensor, lam: float) -> torch.Tensor:
    """Redundancy-reduction loss on a cross-correlation matrix.

    ``sum_i (1 - C_ii)^2 + lam * sum_{i != j} C_ij^2`` -- nonnegative, and
    zero exactly when C is the identity.
    """
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ShapeError(f"expected a square correlation matrix, got {tuple(c.shape)}")
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    diag = torch.diagonal(c)
    invariance = ((1.0 - diag) ** 2).sum()
    off = c - torch.diag_embed(diag)
    redundancy = (off**2).sum()
    return invariance + lam * redundancy


def jigsaw_order_loss(
    logits_per_step: Sequence[torch.Tensor], labels_per_step: Sequence[torch.Tensor]
) -> torch.Tensor:
    """Sum over progressive steps of the mean order-prediction cross-entropy."""
    if len(logits_per_step) != len(labels_per_step):
        raise ShapeError(
            f"{len(logits_per_step)} logit tensors vs {len(labels_per_step)} label tensors"
        )
    if not logits_per_step:
        raise ShapeError("at least one step is required")
    total = None
    for logits, labels in zip(logits_per_step, labels_per_step):
        labels = torch.as_tensor(labels, dtype=torch.long, device=logits.device)
        if labels.numel() and (labels.min() < 0 or labels.max() >= logits.shape[-1]):
            raise LabelError(
                f"label outside pool range [0, {logits.shape[-1]}): "
                f"min={int(labels.min())}, max={int(labels.max())}"
            )
        step_loss = F.cross_entropy(logits, labels)
        total = step_loss if total is None else total + step_loss
    return total


def pretrain_loss(
    za: torch.Tensor,
    zb: torch.Tensor,
    logits_per_step: Sequence[torch.Tensor],
    labels_per_step: Sequence[torch.Tensor],
    lam: float,
    beta: float,
) -> tuple[torch.Tensor, dict]:
    """Combined pretraining objective: correlation alignment + order prediction.

    Returns the scalar total and a diagnostics dict carrying each term
    separately plus the count of constant embedding dimensions per branch.
    """
    c = cross_correlation(za, zb)
    bt = barlow_loss(c, lam)
    order = jigsaw_order_loss(logits_per_step, labels_per_step)
    total = bt + beta * order
    diagnostics = {
        "loss_total": float(total.detach()),
        "loss_barlow": float(bt.detach()),
        "loss_order": float(order.detach()),
        "degenerate_dims_aug": degenerate_dims(za.detach()),
        "degenerate_dims_jigsaw": degenerate_dims(zb.detach()),
    }
    return total, diagnostics
