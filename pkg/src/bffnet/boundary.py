"""Parameter-free reverse-attention boundary enhancement.

A coarser prediction is resized to a feature's spatial size, squashed through
a sigmoid, and complemented. The resulting weights are largest where the
prediction is least confident, so multiplying and re-adding the feature
amplifies it around uncertain regions such as object boundaries.
"""

from __future__ import annotations

import torch

from .errors import ShapeError
from .ops import resize_to


def reverse_attention_weights(next_logits: torch.Tensor, target_size) -> torch.Tensor:
    """1 - sigmoid of ``next_logits`` bilinearly resized to ``target_size``."""
    if next_logits.dim() != 4 or next_logits.shape[1] != 1:
        raise ShapeError(
            f"expected one-channel (B, 1, h, w) logits, got {tuple(next_logits.shape)}"
        )
    return 1.0 - torch.sigmoid(resize_to(next_logits, target_size))


def boundary_enhance(feature: torch.Tensor, next_logits: torch.Tensor) -> torch.Tensor:
    """feature * weights + feature, with the weights broadcast over channels."""
    if feature.dim() != 4:
        raise ShapeError(f"expected (B, C, h, w) feature, got {tuple(feature.shape)}")
    if feature.shape[0] != next_logits.shape[0]:
        raise ShapeError(
            f"batch mismatch: feature {feature.shape[0]} vs logits {next_logits.shape[0]}"
        )
    weights = reverse_attention_weights(next_logits, feature.shape[-2:])
    return feature * weights + feature
