"""Full network assembly and checkpoint serialization.

The cascade runs coarse to fine. The encoder pyramid's three deepest levels
are projected to a common width and aggregated into a global map, whose
feature and logits seed the refinement loop. At each level (5, then 4, then
3) the projected encoder feature is boundary-enhanced by reverse attention
against the previous level's logits, cross-fused with the previous level's
resized feature, and read out by a pointwise head. All four logit maps are
returned upsampled to the input size; the finest side output is the final
mask prediction.

The two module toggles reproduce an ablation grid: without boundary
enhancement the projected feature feeds the fusion directly, and without
cross-fusion the previous feature is resized, projected by a pointwise
convolution, and added.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .boundary import boundary_enhance
from .decoder import ChannelReducer, DecoderConfig, PartialDecoder
from .encoder import EncoderSpec, build_encoder
from .errors import FormatError, ShapeError, VersionError
from .fusion import CrossFusion
from .ops import resize_to

CHECKPOINT_MAGIC = b"BFFNETCK"
CHECKPOINT_VERSION = 1

_LEVELS = (5, 4, 3)


@dataclass(frozen=True)
class ModelConfig:
    """Everything needed to rebuild the network, including ablation toggles."""

    encoder: EncoderSpec = field(default_factory=EncoderSpec)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    use_bfem: bool = True
    use_fcfm: bool = True
    share_conv3: bool = True
    residual_side_outputs: bool = False
    normalize: bool = True

    def to_dict(self) -> dict:
        return {
            "encoder": self.encoder.to_dict(),
            "decoder": self.decoder.to_dict(),
            "use_bfem": self.use_bfem,
            "use_fcfm": self.use_fcfm,
            "share_conv3": self.share_conv3,
            "residual_side_outputs": self.residual_side_outputs,
            "normalize": self.normalize,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            encoder=EncoderSpec.from_dict(d["encoder"]),
            decoder=DecoderConfig.from_dict(d["decoder"]),
            use_bfem=d["use_bfem"],
            use_fcfm=d["use_fcfm"],
            share_conv3=d.get("share_conv3", True),
            residual_side_outputs=d.get("residual_side_outputs", False),
            normalize=d.get("normalize", True),
        )


@dataclass
class NetworkOutputs:
    """Four one-channel logit maps at the input's spatial size."""

    global_logits: torch.Tensor
    side3: torch.Tensor
    side4: torch.Tensor
    side5: torch.Tensor

    def __post_init__(self):
        shape = self.global_logits.shape
        for name, t in self.items():
            if t.dim() != 4 or t.shape[1] != 1:
                raise ShapeError(f"{name} must be (B, 1, h, w), got {tuple(t.shape)}")
            if t.shape != shape:
                raise ShapeError(
                    f"{name} shape {tuple(t.shape)} differs from {tuple(shape)}"
                )

    def items(self):
        return (("global", self.global_logits), ("side3", self.side3),
                ("side4", self.side4), ("side5", self.side5))

    @property
    def final_mask_logits(self) -> torch.Tensor:
        return self.side3


class BFFNet(nn.Module):
    """Boundary feature fusion segmentation network."""

    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        self.config = config or ModelConfig()
        cfg = self.config
        width = cfg.decoder.channels
        enc_channels = cfg.encoder.channels

        self.encoder = build_encoder(cfg.encoder)
        self.reducers = nn.ModuleDict({
            str(level): ChannelReducer(enc_channels[level - 1], width, cfg.normalize)
            for level in _LEVELS
        })
        self.global_decoder = PartialDecoder(width, cfg.normalize)
        if cfg.use_fcfm:
            self.fusions = nn.ModuleDict({
                str(level): CrossFusion(width, cfg.decoder.reduction,
                                        cfg.share_conv3, cfg.normalize)
                for level in _LEVELS
            })
        else:
            self.merges = nn.ModuleDict({
                str(level): nn.Conv2d(width, width, 1) for level in _LEVELS
            })
        self.heads = nn.ModuleDict({
            str(level): nn.Conv2d(width, 1, 1) for level in _LEVELS
        })

    def forward(self, image) -> NetworkOutputs:
        cfg = self.config
        pyramid = self.encoder(image)
        reduced = {
            level: self.reducers[str(level)](pyramid.levels[level - 1])
            for level in _LEVELS
        }
        global_map = self.global_decoder(reduced[3], reduced[4], reduced[5])

        prev_feature = global_map.feature
        prev_logits = global_map.logits
        side = {}
        for level in _LEVELS:
            feature = reduced[level]
            if cfg.use_bfem:
                feature = boundary_enhance(feature, prev_logits)
            carried = resize_to(prev_feature, feature)
            if cfg.use_fcfm:
                fused = self.fusions[str(level)](feature, carried)
            else:
                fused = feature + self.merges[str(level)](carried)
            logits = self.heads[str(level)](fused)
            if cfg.residual_side_outputs:
                logits = logits + resize_to(prev_logits, logits)
            side[level] = logits
            prev_feature, prev_logits = fused, logits

        size = image.shape[-2:]
        return NetworkOutputs(
            global_logits=resize_to(global_map.logits, size),
            side3=resize_to(side[3], size),
            side4=resize_to(side[4], size),
            side5=resize_to(side[5], size),
        )


def predict_mask(outputs: NetworkOutputs, threshold: float = 0.5) -> torch.Tensor:
    """Binary mask from the final side output: sigmoid(logits) > threshold."""
    return (torch.sigmoid(outputs.final_mask_logits) > threshold).to(torch.uint8)


def save_checkpoint(model: BFFNet, path) -> Path:
    """Write a versioned binary checkpoint: JSON header plus raw tensor blobs."""
    path = Path(path)
    state = model.state_dict()
    tensors = []
    blobs = []
    offset = 0
    for name, tensor in state.items():
        arr = tensor.detach().cpu().numpy()
        raw = arr.tobytes()
        tensors.append({
            "name": name,
            "dtype": arr.dtype.name,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({
        "config": model.config.to_dict(),
        "tensors": tensors,
    }, sort_keys=True).encode("utf-8")
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)
    os.replace(tmp, path)
    return path


def read_checkpoint_header(path) -> dict:
    """Parse and validate the checkpoint header without loading any weights."""
    path = Path(path)
    data = path.read_bytes()
    fixed = len(CHECKPOINT_MAGIC) + struct.calcsize("<IQ")
    if len(data) < fixed:
        raise FormatError(f"{path} is truncated: {len(data)} bytes")
    if data[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path} is not a checkpoint (bad magic)")
    version, header_len = struct.unpack_from("<IQ", data, len(CHECKPOINT_MAGIC))
    if version != CHECKPOINT_VERSION:
        raise VersionError(
            f"unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )
    if len(data) < fixed + header_len:
        raise FormatError(f"{path} is truncated inside the header")
    try:
        header = json.loads(data[fixed:fixed + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path} has a corrupt header: {exc}") from exc
    if "config" not in header or "tensors" not in header:
        raise FormatError(f"{path} header is missing required fields")
    header["_blob_start"] = fixed + header_len
    header["_file_size"] = len(data)
    return header


def load_checkpoint(path, into: BFFNet | None = None) -> BFFNet:
    """Rebuild a model from a checkpoint, or load weights into a given one.

    Loading into an existing model requires its config to equal the embedded
    one exactly; otherwise a VersionError is raised.
    """
    path = Path(path)
    header = read_checkpoint_header(path)
    config = ModelConfig.from_dict(header["config"])
    if into is not None:
        if into.config.to_dict() != config.to_dict():
            raise VersionError(
                f"checkpoint config {header['config']} does not match the model's "
                f"config {into.config.to_dict()}"
            )
        model = into
    else:
        model = BFFNet(config)

    data = path.read_bytes()
    start = header["_blob_start"]
    state = {}
    for meta in header["tensors"]:
        lo = start + meta["offset"]
        hi = lo + meta["nbytes"]
        if hi > len(data):
            raise FormatError(f"{path} is truncated: tensor {meta['name']} incomplete")
        arr = np.frombuffer(data[lo:hi], dtype=np.dtype(meta["dtype"]))
        arr = arr.reshape(meta["shape"]).copy()
        state[meta["name"]] = torch.from_numpy(arr)
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise FormatError(f"{path} tensors do not fit the model: {exc}") from exc
    return model
