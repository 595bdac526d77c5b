"""Binarization, part association, dataset-wide IoU, boxes and CorLoc.

Heat maps become binary masks by thresholding at a percentile computed over
the pooled pixels of every image's map for that factor. Factors are matched
to ground-truth parts by coverage; segmentation quality is the IoU with
intersection and union pixel counts summed over the whole image set before
dividing. Co-localization draws a box around the largest connected
component and scores the standard CorLoc percentage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import (
    EmptyPart,
    EmptySet,
    EmptyUnion,
    MissingGroundTruth,
    NoForeground,
    SizeMismatch,
)

_EIGHT_CONN = np.ones((3, 3), dtype=int)


@dataclass(frozen=True)
class BinaryMaskSet:
    """One binary mask per image for a single factor, keyed by image id."""

    factor_id: int
    masks: dict[str, np.ndarray]


@dataclass(frozen=True)
class PartAnnotation:
    """Ground-truth binary masks for one part label, keyed by image id."""

    part_label: str
    masks: dict[str, np.ndarray]


@dataclass(frozen=True)
class BBox:
    """Inclusive pixel box; area = (x_max - x_min + 1) * (y_max - y_min + 1)."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"degenerate box {self}")

    @property
    def area(self) -> int:
        return (self.x_max - self.x_min + 1) * (self.y_max - self.y_min + 1)


def nearest_rank_threshold(values: np.ndarray, percentile: float) -> float:
    """Order statistic at rank ceil(p/100 * n), 1-based (no interpolation)."""
    n = values.size
    if n == 0:
        raise EmptySet("cannot take a percentile of zero values")
    rank = max(1, math.ceil(percentile / 100.0 * n))
    return float(np.partition(values.ravel(), rank - 1)[rank - 1])


def binarize_factor(
    maps: dict[str, np.ndarray], factor_id: int = 0, percentile: float = 75.0
) -> BinaryMaskSet:
    """Threshold one factor's maps at the percentile of all pixels of all
    images pooled together; a pixel is foreground iff its value >= threshold."""
    if not maps:
        raise EmptySet("no maps to binarize")
    if not 0 < percentile < 100:
        raise ValueError("percentile must lie in (0, 100)")
    pooled = np.concatenate([np.asarray(m, dtype=np.float64).ravel() for m in maps.values()])
    tau = nearest_rank_threshold(pooled, percentile)
    masks = {
        image_id: (np.asarray(m, dtype=np.float64) >= tau).astype(np.uint8)
        for image_id, m in maps.items()
    }
    return BinaryMaskSet(factor_id=factor_id, masks=masks)


def _paired_masks(b: BinaryMaskSet, masks: dict[str, np.ndarray]):
    if set(b.masks) != set(masks):
        raise SizeMismatch("mask sets cover different images")
    for image_id in b.masks:
        bm = np.asarray(b.masks[image_id], dtype=bool)
        pm = np.asarray(masks[image_id], dtype=bool)
        if bm.shape != pm.shape:
            raise SizeMismatch(f"image {image_id!r}: {bm.shape} vs {pm.shape}")
        yield bm, pm


def coverage(b: BinaryMaskSet, p: PartAnnotation) -> float:
    """Fraction of the part's pixels (summed over the set) inside the factor's masks."""
    inter = 0
    part = 0
    for bm, pm in _paired_masks(b, p.masks):
        inter += int(np.count_nonzero(bm & pm))
        part += int(np.count_nonzero(pm))
    if part == 0:
        raise EmptyPart(f"part {p.part_label!r} has no pixels in the set")
    return inter / part


def associate_parts(coverages: dict[str, float], cov_threshold: float = 0.5) -> set[str]:
    """Parts whose coverage strictly exceeds the threshold."""
    return {label for label, cov in coverages.items() if cov > cov_threshold}


def dataset_iou(b: BinaryMaskSet, parts: list[PartAnnotation]) -> float:
    """IoU of the factor's masks against the per-image union of the given
    parts, with intersection/union pixel counts summed over the whole set."""
    inter = 0
    union = 0
    per_image_union: dict[str, np.ndarray] = {}
    for p in parts:
        for image_id, pm in p.masks.items():
            pm = np.asarray(pm, dtype=bool)
            if image_id in per_image_union:
                per_image_union[image_id] = per_image_union[image_id] | pm
            else:
                per_image_union[image_id] = pm
    for image_id, bm in b.masks.items():
        bm = np.asarray(bm, dtype=bool)
        pm = per_image_union.get(image_id)
        if pm is None:
            pm = np.zeros_like(bm)
        elif pm.shape != bm.shape:
            raise SizeMismatch(f"image {image_id!r}: {bm.shape} vs {pm.shape}")
        inter += int(np.count_nonzero(bm & pm))
        union += int(np.count_nonzero(bm | pm))
    if union == 0:
        raise EmptyUnion("dataset-wide union is empty")
    return inter / union


def connected_components(mask: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """8-connectivity labeling; labels dense from 1, background 0.

    Returns the label grid and component sizes (sizes[i] is the pixel count
    of label i + 1).
    """
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=_EIGHT_CONN)
    sizes = np.bincount(labels.ravel(), minlength=n + 1)[1:]
    return labels, [int(s) for s in sizes]


def largest_component_bbox(mask: np.ndarray) -> BBox:
    """Tight inclusive box around the largest 8-connected component.

    Size ties resolve to the lowest label, i.e. the component encountered
    first in row-major scan order.
    """
    labels, sizes = connected_components(mask)
    if not sizes:
        raise NoForeground("mask has no foreground pixels")
    best = int(np.argmax(sizes)) + 1  # argmax returns the first maximum
    ys, xs = np.nonzero(labels == best)
    return BBox(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


def box_iou(a: BBox, b: BBox) -> float:
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min) + 1
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min) + 1
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def corloc(preds: dict[str, BBox], gts: dict[str, list[BBox]]) -> float:
    """Percentage of predictions whose IoU with some ground-truth box of the
    same image strictly exceeds 0.5."""
    if not preds:
        raise MissingGroundTruth("no predictions to score")
    correct = 0
    for image_id, pred in preds.items():
        boxes = gts.get(image_id)
        if not boxes:
            raise MissingGroundTruth(f"image {image_id!r} has no ground-truth boxes")
        if any(box_iou(pred, gt) > 0.5 for gt in boxes):
            correct += 1
    return 100.0 * correct / len(preds)
