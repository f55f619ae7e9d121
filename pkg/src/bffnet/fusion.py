"""Cross-fusion of two feature streams with per-pixel channel attention."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ShapeError
from .ops import ConvBlock, resize_to


def concat_pair(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Channel concatenation in fixed order (a, b); sizes must already match."""
    if a.shape[0] != b.shape[0] or a.shape[-2:] != b.shape[-2:]:
        raise ShapeError(f"cannot concatenate {tuple(a.shape)} with {tuple(b.shape)}")
    return torch.cat([a, b], dim=1)


class CrossFusion(nn.Module):
    """Fuse two same-width streams into one.

    The second input is resized to the first. A 3x3 convolution compresses
    the concatenated pair to ``channels``; per-pixel channel attention (two
    pointwise convolutions around a ReLU, sigmoid-gated, no pooling)
    re-weights it residually; the gated branch is then concatenated with an
    independent compression of the pair and projected back to ``channels``.

    ``share_conv3`` reuses the first compression as the attention input;
    ``normalize=False`` strips batch norm and ReLU from the 3x3 convolutions
    so the arithmetic can be checked against a scalar reference.
    """

    def __init__(self, channels, reduction, share_conv3=True, normalize=True):
        super().__init__()
        if reduction < 1 or channels % reduction != 0:
            raise ConfigError(f"reduction {reduction} must divide channel width {channels}")
        self.channels = channels
        self.share_conv3 = share_conv3
        self.compress = ConvBlock(2 * channels, channels, 3, normalize)
        if not share_conv3:
            self.att_compress = ConvBlock(2 * channels, channels, 3, normalize)
        self.squeeze = nn.Conv2d(channels, channels // reduction, 1)
        self.excite = nn.Conv2d(channels // reduction, channels, 1)
        self.alt = ConvBlock(2 * channels, channels, 3, normalize)
        self.out = ConvBlock(2 * channels, channels, 3, normalize)

    def _attention(self, compressed):
        return torch.sigmoid(self.excite(F.relu(self.squeeze(compressed))))

    def local_attention(self, pair: torch.Tensor) -> torch.Tensor:
        """Per-pixel channel attention weights in (0, 1) for a concatenated pair."""
        if pair.shape[1] != 2 * self.channels:
            raise ShapeError(
                f"expected {2 * self.channels} channels, got {pair.shape[1]}"
            )
        x = self.compress(pair) if self.share_conv3 else self.att_compress(pair)
        return self._attention(x)

    def forward(self, a, b):
        if a.shape[1] != self.channels or b.shape[1] != self.channels:
            raise ShapeError(
                f"both inputs must have {self.channels} channels, "
                f"got {a.shape[1]} and {b.shape[1]}"
            )
        pair = concat_pair(a, resize_to(b, a))
        compressed = self.compress(pair)
        att_input = compressed if self.share_conv3 else self.att_compress(pair)
        local = compressed * self._attention(att_input) + compressed
        return self.out(concat_pair(local, self.alt(pair)))
