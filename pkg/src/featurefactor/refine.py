"""Mean-field refinement of heat maps with a guided-filter pairwise term.

Upsampled heat maps become unary potentials of a per-pixel label
distribution over k factors plus one implicit background channel. Each
iteration filters the current distribution with a guided filter steered by
the input image (grayscale), then renormalizes:

    Q~_j = guided_filter(guide, Q_j)
    Q    = softmax over channels of (log U + pairwise_weight * Q~)

All refinement math runs in float64; results are returned as float32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SizeMismatch
from .heatmaps import HeatMapStack


@dataclass(frozen=True)
class RefineConfig:
    iterations: int = 10
    radius: int = 30
    epsilon: float = 1e-4
    pairwise_weight: float = 3.0
    # unary score of the implicit background channel, on the max-normalized
    # scale of the factor values
    background_level: float = 0.5

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.radius < 1:
            raise ValueError("radius must be >= 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.pairwise_weight < 0:
            raise ValueError("pairwise_weight must be >= 0")


def _box_sum(m: np.ndarray, radius: int) -> np.ndarray:
    """Sum over (2r+1)^2 windows clamped at the borders, via integral image."""
    h, w = m.shape
    ii = np.zeros((h + 1, w + 1), dtype=np.float64)
    np.cumsum(np.cumsum(m, axis=0), axis=1, out=ii[1:, 1:])
    y0 = np.clip(np.arange(h) - radius, 0, h)
    y1 = np.clip(np.arange(h) + radius + 1, 0, h)
    x0 = np.clip(np.arange(w) - radius, 0, w)
    x1 = np.clip(np.arange(w) + radius + 1, 0, w)
    return (
        ii[np.ix_(y1, x1)] - ii[np.ix_(y0, x1)] - ii[np.ix_(y1, x0)] + ii[np.ix_(y0, x0)]
    )


def _box_mean(m: np.ndarray, radius: int, counts: np.ndarray) -> np.ndarray:
    return _box_sum(m, radius) / counts


def _window_counts(h: int, w: int, radius: int) -> np.ndarray:
    ys = np.minimum(np.arange(h) + radius + 1, h) - np.maximum(np.arange(h) - radius, 0)
    xs = np.minimum(np.arange(w) + radius + 1, w) - np.maximum(np.arange(w) - radius, 0)
    return ys[:, None].astype(np.float64) * xs[None, :]


def guided_filter(
    guide: np.ndarray, src: np.ndarray, radius: int, epsilon: float
) -> np.ndarray:
    """Edge-preserving smoothing of ``src`` as a local linear transform of
    ``guide``: q = mean(a) * guide + mean(b) with
    a = cov(guide, src) / (var(guide) + epsilon), b = mean(src) - a * mean(guide).

    Window statistics use box windows of half-size ``radius`` that shrink at
    the image borders, so only valid pixels contribute.
    """
    guide = np.asarray(guide, dtype=np.float64)
    src = np.asarray(src, dtype=np.float64)
    if guide.shape != src.shape or guide.ndim != 2:
        raise SizeMismatch(f"guide {guide.shape} and src {src.shape} must be equal 2-D grids")
    counts = _window_counts(*guide.shape, radius)
    mean_g = _box_mean(guide, radius, counts)
    mean_s = _box_mean(src, radius, counts)
    corr_gg = _box_mean(guide * guide, radius, counts)
    corr_gs = _box_mean(guide * src, radius, counts)
    var_g = corr_gg - mean_g * mean_g
    cov_gs = corr_gs - mean_g * mean_s
    a = cov_gs / (var_g + epsilon)
    b = mean_s - a * mean_g
    return _box_mean(a, radius, counts) * guide + _box_mean(b, radius, counts)


def softmax_unary(
    stack: HeatMapStack, background_level: float, global_max: float | None = None
) -> np.ndarray:
    """Per-pixel probabilities over k factors plus a background channel.

    Factor values are first normalized by ``global_max`` (the stack's own
    maximum by default; pass the set-wide maximum when refining a batch),
    then a softmax is taken over (v_1 .. v_k, background_level). Returns a
    (k+1, h, w) float64 array whose channels sum to 1; the background is the
    last channel.
    """
    v = stack.maps.astype(np.float64)
    top = v.max() if global_max is None else float(global_max)
    if top > 0:
        v = v / top
    scores = np.concatenate(
        [v, np.full((1, stack.height, stack.width), background_level)], axis=0
    )
    scores -= scores.max(axis=0, keepdims=True)
    e = np.exp(scores)
    return e / e.sum(axis=0, keepdims=True)


def meanfield_refine(
    stack: HeatMapStack,
    guide: np.ndarray,
    cfg: RefineConfig,
    global_max: float | None = None,
) -> HeatMapStack:
    """Refine one image's upsampled heat maps against its grayscale guide.

    Returns the k non-background channels of the final distribution.
    With zero iterations or zero pairwise weight the unary probabilities are
    returned unchanged (both are exact fixed points of the update).
    """
    guide = np.asarray(guide, dtype=np.float64)
    if guide.shape != (stack.height, stack.width):
        raise SizeMismatch(
            f"guide is {guide.shape}, heat maps are {(stack.height, stack.width)}"
        )
    unary = softmax_unary(stack, cfg.background_level, global_max)
    q = unary
    if cfg.pairwise_weight > 0:
        log_u = np.log(unary)
        for _ in range(cfg.iterations):
            filtered = np.stack(
                [guided_filter(guide, q[j], cfg.radius, cfg.epsilon) for j in range(q.shape[0])]
            )
            scores = log_u + cfg.pairwise_weight * filtered
            scores -= scores.max(axis=0, keepdims=True)
            e = np.exp(scores)
            q = e / e.sum(axis=0, keepdims=True)
    return HeatMapStack(stack.image_id, np.maximum(q[:-1], 0).astype(np.float32))


def meanfield_refine_batch(
    stacks: list[HeatMapStack], guides: list[np.ndarray], cfg: RefineConfig
) -> list[HeatMapStack]:
    """Refine every image in a set against a common set-wide value scale."""
    if len(stacks) != len(guides):
        raise SizeMismatch(f"{len(stacks)} stacks but {len(guides)} guides")
    global_max = max((float(s.maps.max()) for s in stacks), default=0.0)
    return [
        meanfield_refine(s, g, cfg, global_max) for s, g in zip(stacks, guides)
    ]


def rgb_to_gray(image: np.ndarray) -> np.ndarray:
    """Luma guide in [0, 1] from an 8-bit RGB raster."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise SizeMismatch(f"expected RGB raster (h, w, 3), got {image.shape}")
    return (0.299 * image[..., 0] + 0.587 * image[..., 1] + 0.114 * image[..., 2]) / 255.0
