"""Binary segmentation metrics, the weighted challenge score, and reports.

Two boundary-distance variants ship side by side. ``hd_literal`` is the
challenge's published min-of-min city-block distance, which is zero whenever
the masks share a pixel. ``hd_standard`` is the conventional symmetric
Hausdorff distance under the Euclidean metric, normalized by the image
diagonal so it lies in [0, 1]; the combined score uses it by default.

Empty-mask conventions (the challenge definition leaves them open):
dice/iou of two empty masks is 1; the distances of two empty masks are 0;
with exactly one empty mask, hd_literal is the larger image dimension and
hd_standard is 1.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ShapeError

SCORE_WEIGHTS = (0.4, 0.4, 0.3)

HD_KINDS = ("standard", "literal")


def _as_binary(name: str, mask) -> np.ndarray:
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.dtype != bool:
        values = np.unique(arr)
        if not np.isin(values, (0, 1)).all():
            raise ShapeError(f"{name} must be binary, got values {values.tolist()}")
        arr = arr.astype(bool)
    return arr


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = _as_binary("first mask", a)
    b = _as_binary("second mask", b)
    if a.shape != b.shape:
        raise ShapeError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def dice(a, b) -> float:
    """2|A∩B| / (|A|+|B|); 1.0 when both masks are empty."""
    a, b = _pair(a, b)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def iou(a, b) -> float:
    """|A∩B| / |A∪B|; 1.0 when both masks are empty."""
    a, b = _pair(a, b)
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(a, b).sum()) / union


def hd_literal(a, b) -> float:
    """Minimum city-block distance between any pixel of A and any pixel of B.

    0.0 if both masks are empty; the larger image dimension if exactly one is.
    """
    a, b = _pair(a, b)
    a_any, b_any = bool(a.any()), bool(b.any())
    if not a_any and not b_any:
        return 0.0
    if a_any != b_any:
        return float(max(a.shape))
    # distance of every pixel to the nearest B pixel, exact for city-block
    dist_to_b = ndimage.distance_transform_cdt(~b, metric="taxicab")
    return float(dist_to_b[a].min())


def hd_standard(a, b) -> float:
    """Symmetric Euclidean Hausdorff distance over the image diagonal, in [0, 1].

    0.0 if both masks are empty; 1.0 if exactly one is.
    """
    a, b = _pair(a, b)
    a_any, b_any = bool(a.any()), bool(b.any())
    if not a_any and not b_any:
        return 0.0
    if a_any != b_any:
        return 1.0
    dist_to_a = ndimage.distance_transform_edt(~a)
    dist_to_b = ndimage.distance_transform_edt(~b)
    forward = float(dist_to_b[a].max())
    backward = float(dist_to_a[b].max())
    h, w = a.shape
    return max(forward, backward) / math.hypot(h - 1, w - 1)


def score(dice_value: float, iou_value: float, hd_value: float,
          weights=SCORE_WEIGHTS) -> float:
    """w1*dice + w2*iou + w3*(1 - hd), exactly as the challenge defines it.

    With the official weights (0.4, 0.4, 0.3) the maximum is 1.1, not 1.
    """
    w1, w2, w3 = weights
    return w1 * dice_value + w2 * iou_value + w3 * (1.0 - hd_value)


def pr_curve(prob_maps, gt_masks, thresholds=None) -> list[tuple[float, float, float]]:
    """Micro-averaged pixel precision/recall over a set of images.

    A pixel counts as predicted foreground when its probability is strictly
    above the threshold. Returns (threshold, precision, recall) triples;
    precision is 1.0 when nothing is predicted, recall is 1.0 when there is
    no foreground at all.
    """
    if len(prob_maps) != len(gt_masks):
        raise ShapeError(f"{len(prob_maps)} probability maps vs {len(gt_masks)} masks")
    if thresholds is None:
        thresholds = np.linspace(0.0, 1.0, 256)
    thresholds = np.asarray(thresholds, dtype=np.float64)

    predicted = np.zeros(len(thresholds), dtype=np.int64)
    true_pos = np.zeros(len(thresholds), dtype=np.int64)
    positives = 0
    for probs, gt in zip(prob_maps, gt_masks):
        probs = np.asarray(probs, dtype=np.float64)
        gt = _as_binary("ground truth", gt)
        if probs.shape != gt.shape:
            raise ShapeError(f"probability map {probs.shape} vs mask {gt.shape}")
        flat = np.sort(probs.ravel())
        fg = np.sort(probs[gt].ravel())
        # count of values strictly above each threshold
        predicted += flat.size - np.searchsorted(flat, thresholds, side="right")
        true_pos += fg.size - np.searchsorted(fg, thresholds, side="right")
        positives += fg.size

    points = []
    for t, pp, tp in zip(thresholds, predicted, true_pos):
        precision = tp / pp if pp > 0 else 1.0
        recall = tp / positives if positives > 0 else 1.0
        points.append((float(t), float(precision), float(recall)))
    return points


@dataclass
class ImageMetrics:
    id: str
    dice: float
    iou: float
    hd_literal: float
    hd_standard: float
    score: float


@dataclass
class MetricReport:
    """Per-image metric rows plus their arithmetic means."""

    per_image: list[ImageMetrics]
    hd_kind: str = "standard"
    weights: tuple[float, float, float] = SCORE_WEIGHTS

    COLUMNS = ("dice", "iou", "hd_literal", "hd_standard", "score")

    def __post_init__(self):
        if self.hd_kind not in HD_KINDS:
            raise ValueError(f"hd_kind must be one of {HD_KINDS}, got {self.hd_kind!r}")

    @property
    def aggregate(self) -> dict[str, float]:
        if not self.per_image:
            return {c: float("nan") for c in self.COLUMNS}
        return {
            c: float(np.mean([getattr(row, c) for row in self.per_image]))
            for c in self.COLUMNS
        }


def compute_image_metrics(pred, gt, image_id: str, hd_kind: str = "standard") -> ImageMetrics:
    d = dice(pred, gt)
    j = iou(pred, gt)
    h_lit = hd_literal(pred, gt)
    h_std = hd_standard(pred, gt)
    h_for_score = h_std if hd_kind == "standard" else h_lit
    return ImageMetrics(id=image_id, dice=d, iou=j, hd_literal=h_lit,
                        hd_standard=h_std, score=score(d, j, h_for_score))


def evaluate_masks(pred_masks, gt_masks, ids, hd_kind: str = "standard") -> MetricReport:
    """Metric rows for aligned lists of predicted and ground-truth masks."""
    if not (len(pred_masks) == len(gt_masks) == len(ids)):
        raise ShapeError("predictions, ground truths, and ids must align")
    rows = [
        compute_image_metrics(p, g, i, hd_kind)
        for p, g, i in zip(pred_masks, gt_masks, ids)
    ]
    return MetricReport(per_image=rows, hd_kind=hd_kind)


AGGREGATE_ID = "AGGREGATE"


def write_report_csv(report: MetricReport, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("id",) + MetricReport.COLUMNS)
        for row in report.per_image:
            writer.writerow([row.id] + [repr(getattr(row, c)) for c in MetricReport.COLUMNS])
        agg = report.aggregate
        writer.writerow([AGGREGATE_ID] + [repr(agg[c]) for c in MetricReport.COLUMNS])
    return path


def read_report_csv(path, hd_kind: str = "standard") -> MetricReport:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for record in reader:
            if record["id"] == AGGREGATE_ID:
                continue
            rows.append(ImageMetrics(
                id=record["id"],
                dice=float(record["dice"]),
                iou=float(record["iou"]),
                hd_literal=float(record["hd_literal"]),
                hd_standard=float(record["hd_standard"]),
                score=float(record["score"]),
            ))
    return MetricReport(per_image=rows, hd_kind=hd_kind)


def write_report_json(report: MetricReport, path) -> Path:
    path = Path(path)
    payload = {
        "hd_kind": report.hd_kind,
        "weights": list(report.weights),
        "per_image": [
            {"id": r.id, **{c: getattr(r, c) for c in MetricReport.COLUMNS}}
            for r in report.per_image
        ],
        "aggregate": report.aggregate,
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2) + "\n")
    os.replace(tmp, path)
    return path


def read_report_json(path) -> MetricReport:
    payload = json.loads(Path(path).read_text())
    rows = [
        ImageMetrics(id=r["id"], dice=r["dice"], iou=r["iou"],
                     hd_literal=r["hd_literal"], hd_standard=r["hd_standard"],
                     score=r["score"])
        for r in payload["per_image"]
    ]
    return MetricReport(per_image=rows, hd_kind=payload["hd_kind"],
                        weights=tuple(payload["weights"]))


def write_pr_csv(points, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("threshold", "precision", "recall"))
        for t, p, r in points:
            writer.writerow((repr(t), repr(p), repr(r)))
    return path


def read_pr_csv(path) -> list[tuple[float, float, float]]:
    points = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for record in reader:
            points.append((float(record["threshold"]), float(record["precision"]),
                           float(record["recall"])))
    return points
