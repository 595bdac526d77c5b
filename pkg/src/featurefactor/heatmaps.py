"""Per-image spatial heat maps from H columns, bilinear upsampling, overlays.

Each column of H, restricted to one image's row span and reshaped to that
image's activation grid, highlights where the corresponding channel-space
factor is active. Maps are upsampled to image resolution with align-corners
bilinear interpolation before any downstream use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LayoutMismatch, SizeMismatch
from .nmf import Factorization
from .tensors import BatchLayout

# Default overlay palette: k distinct saturated colors, cycled if k > 10.
DEFAULT_PALETTE = (
    (230, 25, 75), (60, 180, 75), (0, 130, 200), (255, 225, 25),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (170, 110, 40),
)


@dataclass(frozen=True)
class HeatMapStack:
    """k spatial maps for one image, shape (k, height, width), all >= 0."""

    image_id: str
    maps: np.ndarray

    def __post_init__(self):
        maps = np.ascontiguousarray(self.maps, dtype=np.float32)
        if maps.ndim != 3 or maps.shape[0] < 1:
            raise ValueError(f"expected (k, h, w) maps with k >= 1, got {maps.shape}")
        if maps.size and maps.min() < 0:
            raise ValueError("heat maps must be non-negative")
        maps.setflags(write=False)
        object.__setattr__(self, "maps", maps)

    @property
    def k(self) -> int:
        return self.maps.shape[0]

    @property
    def height(self) -> int:
        return self.maps.shape[1]

    @property
    def width(self) -> int:
        return self.maps.shape[2]


def columns_to_heatmaps(f: Factorization, layout: BatchLayout) -> list[HeatMapStack]:
    """Reshape each H column into one heat map per image.

    Stack i, factor j at (y, x) reads H[offset_i + y * w_i + x, j].
    """
    if f.H.shape[0] != layout.total_rows:
        raise LayoutMismatch(
            f"H has {f.H.shape[0]} rows, layout expects {layout.total_rows}"
        )
    stacks = []
    for e in layout:
        block = f.H[e.row_offset : e.row_offset + e.row_count]  # (h*w, k)
        maps = block.T.reshape(f.k, e.height, e.width)
        stacks.append(HeatMapStack(e.image_id, maps))
    return stacks


def stacks_to_columns(stacks: list[HeatMapStack]) -> np.ndarray:
    """Inverse of :func:`columns_to_heatmaps`: rebuild the H matrix."""
    blocks = [s.maps.reshape(s.k, s.height * s.width).T for s in stacks]
    return np.vstack(blocks)


def bilinear_upsample(m: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Align-corners bilinear resampling of a single 2-D grid.

    Output pixel (Y, X) samples source coordinate
    (Y * (h-1) / (target_h-1), X * (w-1) / (target_w-1)); a degenerate axis
    (source or target extent 1) maps to coordinate 0.
    """
    m = np.asarray(m, dtype=np.float32)
    h, w = m.shape
    if h < 1 or w < 1 or target_h < 1 or target_w < 1:
        raise ValueError("grid and target dimensions must be >= 1")

    def _coords(src: int, dst: int) -> np.ndarray:
        if src == 1 or dst == 1:
            return np.zeros(dst, dtype=np.float64)
        return np.arange(dst, dtype=np.float64) * (src - 1) / (dst - 1)

    ys = _coords(h, target_h)
    xs = _coords(w, target_w)
    y0 = np.minimum(ys.astype(np.int64), h - 1)
    x0 = np.minimum(xs.astype(np.int64), w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]

    top = m[np.ix_(y0, x0)] * (1 - fx) + m[np.ix_(y0, x1)] * fx
    bot = m[np.ix_(y1, x0)] * (1 - fx) + m[np.ix_(y1, x1)] * fx
    return (top * (1 - fy) + bot * fy).astype(np.float32)


def upsample_stack(stack: HeatMapStack, target_h: int, target_w: int) -> HeatMapStack:
    maps = np.stack(
        [bilinear_upsample(stack.maps[j], target_h, target_w) for j in range(stack.k)]
    )
    return HeatMapStack(stack.image_id, maps)


def render_overlay(
    image: np.ndarray,
    stack: HeatMapStack,
    palette: tuple[tuple[int, int, int], ...] = DEFAULT_PALETTE,
    global_max: float | None = None,
) -> np.ndarray:
    """Blend each pixel with its argmax factor's palette color.

    Blend strength is the factor value divided by ``global_max`` (the stack's
    own maximum by default; pass the set-wide maximum to keep a batch of
    overlays on a common scale). Pixels where every factor is zero are left
    untouched. Returns an (h, w, 4) uint8 RGBA raster.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise SizeMismatch(f"expected RGB raster (h, w, 3), got {image.shape}")
    if image.shape[:2] != (stack.height, stack.width):
        raise SizeMismatch(
            f"image is {image.shape[:2]}, heat maps are {(stack.height, stack.width)}"
        )
    if stack.k > len(palette):
        palette = tuple(palette[i % len(palette)] for i in range(stack.k))

    if global_max is None:
        global_max = float(stack.maps.max())
    # argmax ties resolve to the lowest factor index (np.argmax contract)
    winner = np.argmax(stack.maps, axis=0)
    strength = np.max(stack.maps, axis=0)
    alpha = strength / global_max if global_max > 0 else np.zeros_like(strength)

    colors = np.asarray(palette, dtype=np.float32)[winner]
    rgb = image.astype(np.float32) * (1 - alpha[..., None]) + colors * alpha[..., None]
    out = np.empty((stack.height, stack.width, 4), dtype=np.uint8)
    out[..., :3] = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
    out[..., 3] = np.clip(np.rint(alpha * 255), 0, 255).astype(np.uint8)
    return out
