"""Activation tensors, their flattening into feature matrices, and batch
concatenation with invertible layout bookkeeping.

A convolutional layer's output for one image is an ``h x w x c`` grid of
non-negative values (post-ReLU). Factorization operates on a 2-D view where
each spatial position becomes one row of ``c`` features; a batch of images is
stacked vertically into a single matrix. :class:`BatchLayout` records the row
span of every image so the stacking can be undone.

All data is float32; everything here is immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ChannelMismatch, EmptyBatch, LayoutMismatch, NonNegativityViolated


def _check_non_negative_finite(data: np.ndarray, what: str) -> None:
    if not np.isfinite(data).all():
        raise NonNegativityViolated(f"{what} contains non-finite values")
    if data.size and data.min() < 0:
        raise NonNegativityViolated(f"{what} contains negative values")


@dataclass(frozen=True)
class ActivationTensor:
    """One image's layer activations, shape (height, width, channels)."""

    image_id: str
    data: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise ValueError(f"expected 3-D activations, got shape {data.shape}")
        _check_non_negative_finite(data, "activation tensor")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class FeatureMatrix:
    """Dense non-negative (rows x channels) matrix of spatial feature vectors."""

    data: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 2:
            raise ValueError(f"expected 2-D feature matrix, got shape {data.shape}")
        _check_non_negative_finite(data, "feature matrix")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class LayoutEntry:
    image_id: str
    height: int
    width: int
    row_offset: int

    @property
    def row_count(self) -> int:
        return self.height * self.width


@dataclass(frozen=True)
class BatchLayout:
    """Per-image row spans of a vertically concatenated feature matrix."""

    entries: tuple[LayoutEntry, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        offset = 0
        for e in self.entries:
            if e.row_offset != offset:
                raise LayoutMismatch(
                    f"entry {e.image_id!r} has offset {e.row_offset}, expected {offset}"
                )
            offset += e.row_count

    @property
    def total_rows(self) -> int:
        return sum(e.row_count for e in self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)


def flatten_activations(t: ActivationTensor) -> FeatureMatrix:
    """Flatten spatial dimensions: row ``y * width + x`` holds the channel
    vector at (y, x). A pure reshape; no copy of the underlying values."""
    return FeatureMatrix(t.data.reshape(t.height * t.width, t.channels))


def unflatten_features(m: FeatureMatrix, image_id: str, height: int, width: int) -> ActivationTensor:
    """Inverse of :func:`flatten_activations` for a single image."""
    if m.rows != height * width:
        raise LayoutMismatch(
            f"matrix has {m.rows} rows, expected {height}x{width}={height * width}"
        )
    return ActivationTensor(image_id, m.data.reshape(height, width, m.cols))


def concat_batch(
    matrices: list[tuple[FeatureMatrix, str, int, int]]
) -> tuple[FeatureMatrix, BatchLayout]:
    """Vertically stack per-image feature matrices.

    ``matrices`` is a list of (matrix, image_id, height, width). Images may
    differ in spatial size but must share the channel count.
    """
    if not matrices:
        raise EmptyBatch("cannot concatenate an empty batch")
    cols = matrices[0][0].cols
    entries = []
    offset = 0
    blocks = []
    for m, image_id, h, w in matrices:
        if m.cols != cols:
            raise ChannelMismatch(f"image {image_id!r} has {m.cols} channels, expected {cols}")
        if m.rows != h * w:
            raise LayoutMismatch(
                f"image {image_id!r}: matrix rows {m.rows} != {h}x{w}"
            )
        entries.append(LayoutEntry(image_id, h, w, offset))
        offset += m.rows
        blocks.append(m.data)
    return FeatureMatrix(np.vstack(blocks)), BatchLayout(tuple(entries))


def split_batch(m: FeatureMatrix, layout: BatchLayout) -> list[ActivationTensor]:
    """Undo :func:`concat_batch`, restoring each image's activation tensor."""
    if m.rows != layout.total_rows:
        raise LayoutMismatch(f"matrix has {m.rows} rows, layout expects {layout.total_rows}")
    out = []
    for e in layout:
        block = m.data[e.row_offset : e.row_offset + e.row_count]
        out.append(ActivationTensor(e.image_id, block.reshape(e.height, e.width, m.cols)))
    return out
