"""Small shared building blocks for the network modules."""

from __future__ import annotations

import torch.nn as nn
import torch.nn.functional as F


class ConvBlock(nn.Module):
    """Convolution optionally followed by batch norm and ReLU.

    With ``normalize=False`` this is a plain biased convolution, which keeps
    the arithmetic directly comparable against scalar reference loops.
    """

    def __init__(self, in_channels, out_channels, kernel_size, normalize=True):
        super().__init__()
        padding = kernel_size // 2
        self.conv = nn.Conv2d(in_channels, out_channels, kernel_size,
                              padding=padding, bias=not normalize)
        self.norm = nn.BatchNorm2d(out_channels) if normalize else None

    def forward(self, x):
        x = self.conv(x)
        if self.norm is not None:
            x = F.relu(self.norm(x))
        return x


def resize_to(x, target):
    """Bilinear resize of a NCHW tensor to a (h, w) size or a reference tensor."""
    size = tuple(target.shape[-2:]) if hasattr(target, "shape") else tuple(target)
    if tuple(x.shape[-2:]) == size:
        return x
    return F.interpolate(x, size=size, mode="bilinear", align_corners=False)
