"""Gaussian heatmap targets, their losses, and peak-based point selection.

Instance centroids are rendered as 2D Gaussians merged with a per-pixel max.
Prompts are recovered from a predicted heatmap by 3x3 max-pool peak picking,
gated to the predicted foreground.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import BinaryMask, ImageSize, PixelPoint, mask_centroid, rle_decode
from .errors import InvalidDimensions
from .imageio import write_pgm16

DEFAULT_SIGMA = 8.0
FG_THRESHOLD = 0.85
PEAK_THRESHOLD = 0.007
MAX_PEAKS = 30


@dataclass(frozen=True)
class GaussianSpec:
    """Kernel width for rendering centroid peaks."""

    sigma: float = DEFAULT_SIGMA

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidDimensions(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class Keypoint:
    point: PixelPoint
    score: float


def build_gt_heatmap(instances, size, spec=GaussianSpec()):
    """Render one Gaussian per instance centroid, merged by element-wise max.

    Centroids are kept real-valued, so the value at a pixel is
    exp(-((x-cx)^2 + (y-cy)^2) / (2 sigma^2)) for the nearest centroid in
    kernel-distance terms. A mask reduced to a single visible pixel still
    contributes a peak.
    """
    heat = np.zeros((size.h, size.w), dtype=np.float64)
    if not instances:
        return heat
    ys = np.arange(size.h, dtype=np.float64)[:, None]
    xs = np.arange(size.w, dtype=np.float64)[None, :]
    inv = 1.0 / (2.0 * spec.sigma * spec.sigma)
    for mask in instances:
        c = mask_centroid(mask)
        d2 = (xs - c.x) ** 2 + (ys - c.y) ** 2
        np.maximum(heat, np.exp(-d2 * inv), out=heat)
    return heat


def heatmap_mse(pred, gt):
    """Mean squared per-pixel difference between two heatmaps."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise InvalidDimensions(
            f"heatmap shapes differ: {pred.shape} vs {gt.shape}")
    return float(np.mean((pred - gt) ** 2))


def _log_softmax2(logits):
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def weighted_ce(logits, gt_fg):
    """Class-balanced softmax cross-entropy over a 2-class per-pixel map.

    Each pixel's weight is inversely proportional to the population of its
    own class, and the weights are normalized to sum to one over the image,
    so a rare foreground is not drowned out by background pixels.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = rle_decode(gt_fg)
    if logits.shape[:2] != labels.shape or logits.shape[-1] != 2:
        raise InvalidDimensions(
            f"expected logits {labels.shape} x 2, got {logits.shape}")
    n_fg = int(labels.sum())
    n_bg = labels.size - n_fg
    weights = np.empty(labels.shape, dtype=np.float64)
    if n_fg:
        weights[labels] = 1.0 / n_fg
    if n_bg:
        weights[~labels] = 1.0 / n_bg
    weights /= weights.sum()
    logp = _log_softmax2(logits)
    ce = np.where(labels, -logp[..., 1], -logp[..., 0])
    return float((weights * ce).sum())


def hpg_loss(l_fg, l_h, w_fg=0.1, w_h=1.0):
    """Combined objective: a small foreground term plus the heatmap term."""
    return w_fg * l_fg + w_h * l_h


def binarize_foreground(logits, threshold=FG_THRESHOLD):
    """Threshold the softmax foreground probability (strictly above)."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 3 or logits.shape[-1] != 2:
        raise InvalidDimensions(
            f"expected (h, w, 2) logits, got {logits.shape}")
    # softmax over 2 classes collapses to a sigmoid of the logit margin
    p_fg = 1.0 / (1.0 + np.exp(-(logits[..., 1] - logits[..., 0])))
    return BinaryMask.from_dense(p_fg > threshold)


def select_peaks(heat, fg, k=MAX_PEAKS, threshold=PEAK_THRESHOLD):
    """Pick point prompts from heatmap peaks inside the foreground.

    A pixel qualifies when it equals the max of its 3x3 neighborhood (clipped
    at borders, so plateaus qualify in full), its value is strictly above the
    threshold, and it lies on a foreground pixel. The top k by value are
    returned in descending order; ties keep row-major scan order.
    """
    heat = np.asarray(heat, dtype=np.float64)
    fg_dense = rle_decode(fg)
    if heat.shape != fg_dense.shape:
        raise InvalidDimensions(
            f"heatmap {heat.shape} vs foreground {fg_dense.shape}")
    local_max = ndimage.maximum_filter(heat, size=3, mode="nearest")
    keep = (heat == local_max) & (heat > threshold) & fg_dense
    flat = np.flatnonzero(keep.ravel())
    if flat.size == 0:
        return []
    values = heat.ravel()[flat]
    order = np.argsort(-values, kind="stable")[:k]
    w = heat.shape[1]
    return [
        Keypoint(PixelPoint(x=int(i % w), y=int(i // w)), score=float(v))
        for i, v in zip(flat[order], values[order])
    ]


def save_heatmap(path, heat):
    """Write a heatmap to a 16-bit grayscale PGM for visual inspection."""
    write_pgm16(path, np.asarray(heat, dtype=np.float64))
