"""Weighted IoU + weighted BCE structure loss with deep supervision.

Pixel weights emphasize boundary-adjacent regions: a stride-1 box filter
measures local foreground density, and pixels whose density disagrees with
their own label get weight above one. Each supervised output contributes a
weighted-IoU term (global overlap) plus a weighted-BCE term (per-pixel), and
the deep-supervision total is the plain sum over all four outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ConfigError, ShapeError

LOSS_TERM_NAMES = ("global", "side3", "side4", "side5")


def _check_4d(name, x):
    if x.dim() != 4 or x.shape[1] != 1:
        raise ShapeError(f"{name} must be (B, 1, h, w), got {tuple(x.shape)}")


def _check_matching(logits, target, weights):
    _check_4d("logits", logits)
    if logits.shape != target.shape or logits.shape != weights.shape:
        raise ShapeError(
            f"shape mismatch: logits {tuple(logits.shape)}, target "
            f"{tuple(target.shape)}, weights {tuple(weights.shape)}"
        )


def pixel_weights(target: torch.Tensor, kernel: int = 31, lam: float = 5.0) -> torch.Tensor:
    """1 + lam * |box_filter(target) - target|; always >= 1.

    The box filter runs at stride 1 with reflective padding, so constant
    masks receive uniform weight 1 everywhere including the borders.
    """
    _check_4d("target", target)
    if kernel < 1 or kernel % 2 == 0:
        raise ConfigError(f"weight kernel must be odd and positive, got {kernel}")
    pad = kernel // 2
    if pad >= min(target.shape[-2:]):
        raise ConfigError(
            f"weight kernel {kernel} too large for {tuple(target.shape[-2:])} masks"
        )
    if pad == 0:
        return torch.ones_like(target)
    local = F.avg_pool2d(F.pad(target, (pad, pad, pad, pad), mode="reflect"),
                         kernel, stride=1)
    return 1.0 + lam * (local - target).abs()


def weighted_bce(logits: torch.Tensor, target: torch.Tensor,
                 weights: torch.Tensor) -> torch.Tensor:
    """Per-image weighted binary cross-entropy, averaged over the batch."""
    _check_matching(logits, target, weights)
    bce = F.binary_cross_entropy_with_logits(logits, target, reduction="none")
    num = (weights * bce).flatten(1).sum(dim=1)
    den = weights.flatten(1).sum(dim=1)
    return (num / den).mean()


def weighted_iou(logits: torch.Tensor, target: torch.Tensor,
                 weights: torch.Tensor, eps: float = 1.0) -> torch.Tensor:
    """Per-image weighted soft-IoU loss, averaged over the batch.

    eps=1 keeps the ratio defined on empty masks.
    """
    _check_matching(logits, target, weights)
    probs = torch.sigmoid(logits)
    inter = (weights * probs * target).flatten(1).sum(dim=1)
    union = (weights * (probs + target - probs * target)).flatten(1).sum(dim=1)
    return (1.0 - (inter + eps) / (union + eps)).mean()


@dataclass
class TermLoss:
    iou: torch.Tensor
    bce: torch.Tensor

    @property
    def total(self) -> torch.Tensor:
        return self.iou + self.bce


@dataclass
class LossBreakdown:
    """Deep-supervision total and the per-output IoU/BCE components."""

    total: torch.Tensor
    terms: dict[str, TermLoss]


def structure_loss(logits, target, weights) -> TermLoss:
    """One supervised output's loss: weighted IoU plus weighted BCE."""
    return TermLoss(iou=weighted_iou(logits, target, weights),
                    bce=weighted_bce(logits, target, weights))


def total_loss(outputs, target: torch.Tensor, kernel: int = 31,
               lam: float = 5.0) -> LossBreakdown:
    """Sum of the structure loss over the global map and all three side outputs.

    All maps must already be upsampled to the ground truth's size; the pixel
    weight map is computed once from the ground truth and shared.
    """
    _check_4d("target", target)
    weights = pixel_weights(target, kernel=kernel, lam=lam)
    maps = (outputs.global_logits, outputs.side3, outputs.side4, outputs.side5)
    terms = {}
    total = None
    for name, logits in zip(LOSS_TERM_NAMES, maps):
        if logits.shape != target.shape:
            raise ShapeError(
                f"{name} output {tuple(logits.shape)} does not match "
                f"target {tuple(target.shape)}"
            )
        term = structure_loss(logits, target, weights)
        terms[name] = term
        total = term.total if total is None else total + term.total
    return LossBreakdown(total=total, terms=terms)
