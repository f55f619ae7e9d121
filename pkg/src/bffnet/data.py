"""Image/mask pair loading, resizing, and synthetic dataset generation.

Masks are binary throughout the pipeline: uint8 arrays of {0, 1} that stay
binary after every stage. Images are channel-first float32 RGB arrays scaled
to [0, 1]. Target sizes for the network must be multiples of 32 so that all
five encoder strides divide evenly.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError

from .errors import DataError, DecodeError, InvalidScale, InvalidTarget, ShapeMismatch

# 8-bit mask values strictly above this threshold become foreground.
MASK_THRESHOLD = 127

# Every spatial target must be a multiple of this (encoder stride contract).
SIZE_MULTIPLE = 32

# Default multiscale training factors.
TRAIN_SCALES = (0.75, 1.0, 1.25)

SPLITS = ("train", "val", "test")


@dataclass
class ImageMaskPair:
    """One image with its binary ground-truth mask.

    image: float32 of shape (3, h, w) with values in [0, 1].
    mask: uint8 of shape (h, w) with values in {0, 1}.
    """

    image: np.ndarray
    mask: np.ndarray
    id: str

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ShapeMismatch(f"image must be (3, h, w), got {self.image.shape}")
        if self.mask.ndim != 2:
            raise ShapeMismatch(f"mask must be (h, w), got {self.mask.shape}")
        if self.image.shape[1:] != self.mask.shape:
            raise ShapeMismatch(
                f"image size {self.image.shape[1:]} != mask size {self.mask.shape}"
            )
        values = np.unique(self.mask)
        if not np.isin(values, (0, 1)).all():
            raise DataError(f"mask of {self.id!r} is not binary: values {values.tolist()}")

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def width(self) -> int:
        return self.mask.shape[1]


@dataclass
class ManifestEntry:
    image: str
    mask: str
    id: str


@dataclass
class DatasetManifest:
    """Listing of image/mask files for one split; paths are relative to root."""

    entries: list[ManifestEntry]
    split: str
    root: Path

    def __post_init__(self):
        if self.split not in SPLITS:
            raise DataError(f"unknown split {self.split!r}, expected one of {SPLITS}")
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DataError(f"duplicate ids in {self.split} manifest: {dupes}")

    def __len__(self) -> int:
        return len(self.entries)

    def image_path(self, entry: ManifestEntry) -> Path:
        return Path(self.root) / entry.image

    def mask_path(self, entry: ManifestEntry) -> Path:
        return Path(self.root) / entry.mask

    def load(self, index: int) -> ImageMaskPair:
        entry = self.entries[index]
        return load_pair(self.image_path(entry), self.mask_path(entry), pair_id=entry.id)


def manifest_path(data_dir, split: str) -> Path:
    return Path(data_dir) / f"manifest_{split}.json"


def save_manifest(manifest: DatasetManifest, path) -> Path:
    path = Path(path)
    payload = {
        "split": manifest.split,
        "entries": [
            {"image": e.image, "mask": e.mask, "id": e.id} for e in manifest.entries
        ],
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2) + "\n")
    os.replace(tmp, path)
    return path


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    """Read a manifest JSON; verifies that every listed file exists."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    try:
        payload = json.loads(path.read_text())
        entries = [
            ManifestEntry(image=e["image"], mask=e["mask"], id=e["id"])
            for e in payload["entries"]
        ]
        manifest = DatasetManifest(entries=entries, split=payload["split"], root=path.parent)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed manifest {path}: {exc}") from exc
    if check_files:
        for entry in manifest.entries:
            for p in (manifest.image_path(entry), manifest.mask_path(entry)):
                if not p.is_file():
                    raise DataError(f"manifest {path} lists missing file {p}")
    return manifest


def verify_manifest(manifest: DatasetManifest) -> None:
    """Decode every listed pair; raises if any file is unreadable."""
    for i in range(len(manifest)):
        manifest.load(i)


def load_pair(image_path, mask_path, pair_id: str | None = None,
              threshold: int = MASK_THRESHOLD) -> ImageMaskPair:
    """Decode an image/mask file pair.

    The image is converted to RGB and scaled to [0, 1]; the mask is read as a
    single 8-bit channel and binarized at ``value > threshold``.
    """
    try:
        with Image.open(image_path) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DecodeError(f"cannot decode image {image_path}: {exc}") from exc
    try:
        with Image.open(mask_path) as msk:
            gray = np.asarray(msk.convert("L"))
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DecodeError(f"cannot decode mask {mask_path}: {exc}") from exc
    mask = (gray > threshold).astype(np.uint8)
    image = np.ascontiguousarray(rgb.transpose(2, 0, 1))
    if image.shape[1:] != mask.shape:
        raise ShapeMismatch(
            f"image {image.shape[1:]} and mask {mask.shape} differ "
            f"({image_path} / {mask_path})"
        )
    if pair_id is None:
        pair_id = Path(image_path).stem
    return ImageMaskPair(image=image, mask=mask, id=pair_id)


def _check_target(target_h: int, target_w: int) -> None:
    for name, value in (("height", target_h), ("width", target_w)):
        if value < SIZE_MULTIPLE or value % SIZE_MULTIPLE != 0:
            raise InvalidTarget(
                f"target {name} {value} must be >= {SIZE_MULTIPLE} and divisible "
                f"by {SIZE_MULTIPLE}"
            )


def resize_pair(pair: ImageMaskPair, target_h: int, target_w: int) -> ImageMaskPair:
    """Resize to (target_h, target_w): bilinear image, nearest-neighbor mask."""
    _check_target(target_h, target_w)
    if (pair.height, pair.width) == (target_h, target_w):
        return pair
    image_t = torch.from_numpy(pair.image).unsqueeze(0)
    image = F.interpolate(image_t, size=(target_h, target_w), mode="bilinear",
                          align_corners=False)[0].numpy()
    mask_t = torch.from_numpy(pair.mask).to(torch.float32)[None, None]
    mask = F.interpolate(mask_t, size=(target_h, target_w), mode="nearest")
    mask = mask[0, 0].to(torch.uint8).numpy()
    return ImageMaskPair(image=np.ascontiguousarray(image), mask=mask, id=pair.id)


def snap_to_multiple(value: float, multiple: int = SIZE_MULTIPLE) -> int:
    """Round to the nearest multiple (halves round up), never below one multiple."""
    return max(multiple, int(math.floor(value / multiple + 0.5)) * multiple)


def multiscale_target(scale: float, base_h: int = 320, base_w: int = 640) -> tuple[int, int]:
    return snap_to_multiple(base_h * scale), snap_to_multiple(base_w * scale)


def multiscale_resize(pair: ImageMaskPair, scale: float, base_h: int = 320,
                      base_w: int = 640, allowed=TRAIN_SCALES) -> ImageMaskPair:
    """Resize to round(base * scale) snapped to the nearest multiple of 32."""
    if scale not in allowed:
        raise InvalidScale(f"scale {scale} not in allowed set {tuple(allowed)}")
    target_h, target_w = multiscale_target(scale, base_h, base_w)
    return resize_pair(pair, target_h, target_w)


def _render_sample(rng: np.random.Generator, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw one tooth-like panoramic sample: image in [0, 1] and binary mask."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    ty, tx = yy / max(h - 1, 1), xx / max(w - 1, 1)

    base = rng.uniform(0.28, 0.40)
    image = base + rng.uniform(-0.12, 0.12) * (ty - 0.5) + rng.uniform(-0.08, 0.08) * (tx - 0.5)
    mask = np.zeros((h, w), dtype=bool)

    total = int(rng.integers(8, 17))
    n_upper = total // 2 + int(rng.integers(0, 2))
    n_upper = min(max(n_upper, 2), total - 2)

    for count, arch in ((n_upper, "upper"), (total - n_upper, "lower")):
        positions = np.linspace(0.14, 0.86, count) + rng.uniform(-0.012, 0.012, count)
        for t in positions:
            cx = t * w
            # two shallow arcs: upper teeth around 0.35h, lower around 0.65h
            if arch == "upper":
                cy = h * (0.33 + 0.10 * (2.0 * t - 1.0) ** 2 + rng.uniform(-0.02, 0.02))
            else:
                cy = h * (0.67 - 0.10 * (2.0 * t - 1.0) ** 2 + rng.uniform(-0.02, 0.02))
            half_w = w * rng.uniform(0.020, 0.032)
            half_h = h * rng.uniform(0.07, 0.12)
            angle = rng.normal(0.0, 0.10) + 0.3 * (t - 0.5)
            # exponent 2 is an ellipse; larger values approach a rounded rectangle
            exponent = float(rng.choice((2.0, 3.0, 4.0)))
            brightness = rng.uniform(0.62, 0.85)

            pad_y = half_h + half_w
            pad_x = half_w + half_h
            y0, y1 = max(int(cy - pad_y), 0), min(int(cy + pad_y) + 1, h)
            x0, x1 = max(int(cx - pad_x), 0), min(int(cx + pad_x) + 1, w)
            if y0 >= y1 or x0 >= x1:
                continue
            dy = yy[y0:y1, x0:x1] - cy
            dx = xx[y0:y1, x0:x1] - cx
            c, s = math.cos(angle), math.sin(angle)
            rx = (dx * c + dy * s) / half_w
            ry = (-dx * s + dy * c) / half_h
            inside = np.abs(rx) ** exponent + np.abs(ry) ** exponent <= 1.0
            mask[y0:y1, x0:x1] |= inside
            region = image[y0:y1, x0:x1]
            region[inside] = brightness + 0.05 * ry[inside]

    image = image + rng.normal(0.0, 0.02, size=(h, w))
    return np.clip(image, 0.0, 1.0), mask.astype(np.uint8)


def generate_synthetic_dataset(n: int, h: int, w: int, seed: int, out_dir,
                               split: str = "train") -> DatasetManifest:
    """Render n synthetic samples to out_dir and write the split manifest.

    Deterministic for fixed (n, h, w, seed): two runs produce byte-identical
    files. Images are 8-bit grayscale PNGs; masks are {0, 255} PNGs.
    """
    if n < 1:
        raise DataError(f"n must be >= 1, got {n}")
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(n):
        image, mask = _render_sample(rng, h, w)
        pair_id = f"synth{seed:04d}_{i:03d}"
        image_rel = f"images/{pair_id}.png"
        mask_rel = f"masks/{pair_id}.png"
        Image.fromarray(np.round(image * 255.0).astype(np.uint8), mode="L").save(
            out_dir / image_rel)
        Image.fromarray(mask * 255, mode="L").save(out_dir / mask_rel)
        entries.append(ManifestEntry(image=image_rel, mask=mask_rel, id=pair_id))
    manifest = DatasetManifest(entries=entries, split=split, root=out_dir)
    save_manifest(manifest, manifest_path(out_dir, split))
    return manifest
