"""Five-level feature pyramid encoders with a fixed stride contract.

An encoder maps an RGB image whose height and width are divisible by 32 to
features F1..F5 at 1/2, 1/4, 1/8, 1/16, and 1/32 resolution with nondecreasing
channel widths. Two variants share the interface: a standard residual network
and a small strided-convolution stack for fast CPU tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ConfigError, ShapeError

RESIDUAL_CHANNELS = (64, 64, 128, 256, 512)
TINY_CHANNELS = (16, 24, 32, 48, 64)

_RESIDUAL_BLOCKS = {18: (2, 2, 2, 2), 34: (3, 4, 6, 3)}

VARIANTS = ("residual-full", "tiny")


@dataclass(frozen=True)
class EncoderSpec:
    """Encoder variant, per-level channel widths c1..c5, and weight options."""

    variant: str = "residual-full"
    channels: tuple[int, ...] | None = None
    depth: int = 34
    pretrained: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown encoder variant {self.variant!r}")
        channels = self.channels
        if channels is None:
            channels = RESIDUAL_CHANNELS if self.variant == "residual-full" else TINY_CHANNELS
        channels = tuple(int(c) for c in channels)
        if len(channels) != 5:
            raise ConfigError(f"need 5 channel widths, got {channels}")
        if any(b < a for a, b in zip(channels, channels[1:])):
            raise ConfigError(f"channel widths must be nondecreasing, got {channels}")
        if self.variant == "tiny" and channels[4] > 64:
            raise ConfigError(f"tiny variant requires c5 <= 64, got {channels[4]}")
        if self.variant == "residual-full" and self.depth not in _RESIDUAL_BLOCKS:
            raise ConfigError(f"unsupported residual depth {self.depth}")
        object.__setattr__(self, "channels", channels)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "channels": list(self.channels),
            "depth": self.depth,
            "pretrained": self.pretrained,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderSpec":
        return cls(
            variant=d["variant"],
            channels=tuple(d["channels"]),
            depth=d.get("depth", 34),
            pretrained=d.get("pretrained", False),
        )


@dataclass
class FeaturePyramid:
    """Encoder outputs F1..F5; each level halves the previous spatial size."""

    f1: torch.Tensor
    f2: torch.Tensor
    f3: torch.Tensor
    f4: torch.Tensor
    f5: torch.Tensor

    def __post_init__(self):
        levels = self.levels
        for i, (a, b) in enumerate(zip(levels, levels[1:]), start=1):
            if b.shape[-2] * 2 != a.shape[-2] or b.shape[-1] * 2 != a.shape[-1]:
                raise ShapeError(
                    f"F{i + 1} size {tuple(b.shape[-2:])} is not half of "
                    f"F{i} size {tuple(a.shape[-2:])}"
                )
            if b.shape[1] < a.shape[1]:
                raise ShapeError(
                    f"channel widths must be nondecreasing: F{i}={a.shape[1]}, "
                    f"F{i + 1}={b.shape[1]}"
                )

    @property
    def levels(self):
        return [self.f1, self.f2, self.f3, self.f4, self.f5]

    @property
    def low_levels(self):
        return (self.f1, self.f2)

    @property
    def high_levels(self):
        return (self.f3, self.f4, self.f5)


def _conv3x3(cin, cout, stride=1):
    return nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)


class BasicBlock(nn.Module):
    def __init__(self, inplanes, planes, stride=1, downsample=None):
        super().__init__()
        self.conv1 = _conv3x3(inplanes, planes, stride)
        self.bn1 = nn.BatchNorm2d(planes)
        self.relu = nn.ReLU(inplace=True)
        self.conv2 = _conv3x3(planes, planes)
        self.bn2 = nn.BatchNorm2d(planes)
        self.downsample = downsample

    def forward(self, x):
        identity = x
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        if self.downsample is not None:
            identity = self.downsample(x)
        return self.relu(out + identity)


def _make_stage(inplanes, planes, blocks, stride):
    downsample = None
    if stride != 1 or inplanes != planes:
        downsample = nn.Sequential(
            nn.Conv2d(inplanes, planes, 1, stride=stride, bias=False),
            nn.BatchNorm2d(planes),
        )
    layers = [BasicBlock(inplanes, planes, stride, downsample)]
    layers += [BasicBlock(planes, planes) for _ in range(blocks - 1)]
    return nn.Sequential(*layers)


class ResidualEncoder(nn.Module):
    """Standard basic-block residual backbone producing a 5-level pyramid.

    Submodule names mirror the torchvision layout so ImageNet weights can be
    mapped onto the default configuration.
    """

    def __init__(self, channels=RESIDUAL_CHANNELS, blocks=(3, 4, 6, 3)):
        super().__init__()
        c1, c2, c3, c4, c5 = channels
        self.conv1 = nn.Conv2d(3, c1, 7, stride=2, padding=3, bias=False)
        self.bn1 = nn.BatchNorm2d(c1)
        self.relu = nn.ReLU(inplace=True)
        self.maxpool = nn.MaxPool2d(3, stride=2, padding=1)
        self.layer1 = _make_stage(c1, c2, blocks[0], stride=1)
        self.layer2 = _make_stage(c2, c3, blocks[1], stride=2)
        self.layer3 = _make_stage(c3, c4, blocks[2], stride=2)
        self.layer4 = _make_stage(c4, c5, blocks[3], stride=2)

    def forward(self, x):
        f1 = self.relu(self.bn1(self.conv1(x)))
        f2 = self.layer1(self.maxpool(f1))
        f3 = self.layer2(f2)
        f4 = self.layer3(f3)
        f5 = self.layer4(f4)
        return f1, f2, f3, f4, f5


class TinyEncoder(nn.Module):
    """Five stride-2 convolution stages; small enough for second-scale tests."""

    def __init__(self, channels=TINY_CHANNELS):
        super().__init__()
        stages = []
        cin = 3
        for cout in channels:
            stages.append(nn.Sequential(
                nn.Conv2d(cin, cout, 3, stride=2, padding=1, bias=False),
                nn.BatchNorm2d(cout),
                nn.ReLU(inplace=True),
                nn.Conv2d(cout, cout, 3, padding=1, bias=False),
                nn.BatchNorm2d(cout),
                nn.ReLU(inplace=True),
            ))
            cin = cout
        self.stages = nn.ModuleList(stages)

    def forward(self, x):
        features = []
        for stage in self.stages:
            x = stage(x)
            features.append(x)
        return tuple(features)


class PyramidEncoder(nn.Module):
    """Input-validating wrapper that packages backbone outputs as a pyramid."""

    def __init__(self, spec: EncoderSpec):
        super().__init__()
        self.spec = spec
        if spec.variant == "residual-full":
            self.backbone = ResidualEncoder(spec.channels, _RESIDUAL_BLOCKS[spec.depth])
        else:
            self.backbone = TinyEncoder(spec.channels)
        if spec.pretrained:
            _load_pretrained(self.backbone, spec)

    def forward(self, image) -> FeaturePyramid:
        if image.dim() != 4 or image.shape[1] != 3:
            raise ShapeError(f"expected (B, 3, h, w) input, got {tuple(image.shape)}")
        h, w = image.shape[-2:]
        if h % 32 != 0 or w % 32 != 0:
            raise ShapeError(f"input size {h}x{w} must be divisible by 32")
        return FeaturePyramid(*self.backbone(image))


def _load_pretrained(backbone: nn.Module, spec: EncoderSpec) -> None:
    if spec.variant != "residual-full" or spec.channels != RESIDUAL_CHANNELS:
        raise ConfigError("pretrained weights exist only for the default residual widths")
    try:
        import torchvision.models as tv_models
    except ImportError as exc:
        raise ConfigError("torchvision is required for pretrained weights") from exc
    factory = tv_models.resnet18 if spec.depth == 18 else tv_models.resnet34
    try:
        reference = factory(weights="IMAGENET1K_V1")
    except Exception as exc:
        raise ConfigError(f"could not fetch pretrained weights: {exc}") from exc
    state = {k: v for k, v in reference.state_dict().items() if not k.startswith("fc.")}
    backbone.load_state_dict(state, strict=False)


def build_encoder(spec: EncoderSpec | None = None) -> PyramidEncoder:
    return PyramidEncoder(spec or EncoderSpec())
