"""Aggregation of the three deepest pyramid levels into a global map.

The three high-level features are first projected to a common width, then
fused by cascaded multiplicative gating: deeper features are upsampled and
multiply shallower ones, all three gated maps are concatenated at the F3
scale, and a 3x3 convolution stack plus a pointwise head produce the fused
feature and its one-channel logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ConfigError, ShapeError
from .ops import ConvBlock, resize_to


@dataclass(frozen=True)
class DecoderConfig:
    """Common decoder width and the channel reduction rate of the attention."""

    channels: int = 32
    reduction: int = 4

    def __post_init__(self):
        if self.channels < 8:
            raise ConfigError(f"decoder width must be >= 8, got {self.channels}")
        if self.reduction < 1 or self.channels % self.reduction != 0:
            raise ConfigError(
                f"reduction {self.reduction} must divide decoder width {self.channels}"
            )

    def to_dict(self) -> dict:
        return {"channels": self.channels, "reduction": self.reduction}

    @classmethod
    def from_dict(cls, d: dict) -> "DecoderConfig":
        return cls(channels=d["channels"], reduction=d["reduction"])


@dataclass
class GlobalMap:
    """Fused high-level feature and its one-channel logits at the F3 size."""

    feature: torch.Tensor
    logits: torch.Tensor

    def __post_init__(self):
        if self.logits.shape[1] != 1:
            raise ShapeError(f"global logits must have 1 channel, got {self.logits.shape[1]}")
        if self.logits.shape[-2:] != self.feature.shape[-2:]:
            raise ShapeError(
                f"feature {tuple(self.feature.shape[-2:])} and logits "
                f"{tuple(self.logits.shape[-2:])} sizes differ"
            )


class ChannelReducer(nn.Module):
    """Pointwise projection of a pyramid feature down to the decoder width."""

    def __init__(self, in_channels, out_channels, normalize=True):
        super().__init__()
        if in_channels < out_channels:
            raise ConfigError(
                f"cannot reduce {in_channels} channels to the wider {out_channels}"
            )
        self.proj = ConvBlock(in_channels, out_channels, 1, normalize)

    def forward(self, x):
        return self.proj(x)


class PartialDecoder(nn.Module):
    """Cascaded multiplicative fusion of the F3/F4/F5 projections."""

    def __init__(self, channels, normalize=True):
        super().__init__()
        self.gate4 = ConvBlock(channels, channels, 3, normalize)
        self.gate3_deep = ConvBlock(channels, channels, 3, normalize)
        self.gate3_mid = ConvBlock(channels, channels, 3, normalize)
        self.fuse = nn.Sequential(
            ConvBlock(3 * channels, channels, 3, normalize),
            ConvBlock(channels, channels, 3, normalize),
        )
        self.head = nn.Conv2d(channels, 1, 1)

    def forward(self, f3, f4, f5) -> GlobalMap:
        if not (f3.shape[1] == f4.shape[1] == f5.shape[1]):
            raise ShapeError("partial decoder inputs must share one channel width")
        for name, fine, coarse in (("f3/f4", f3, f4), ("f4/f5", f4, f5)):
            if (fine.shape[-2] != 2 * coarse.shape[-2]
                    or fine.shape[-1] != 2 * coarse.shape[-1]):
                raise ShapeError(
                    f"inconsistent pyramid sizes at {name}: "
                    f"{tuple(fine.shape[-2:])} vs {tuple(coarse.shape[-2:])}"
                )
        g4 = f4 * self.gate4(resize_to(f5, f4))
        g3 = f3 * self.gate3_deep(resize_to(f5, f3)) * self.gate3_mid(resize_to(g4, f3))
        stacked = torch.cat([resize_to(f5, f3), resize_to(g4, f3), g3], dim=1)
        feature = self.fuse(stacked)
        return GlobalMap(feature=feature, logits=self.head(feature))
