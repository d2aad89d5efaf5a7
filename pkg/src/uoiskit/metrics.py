"""Instance segmentation evaluation: matched precision/recall/F and F75.

Predictions are matched one-to-one to ground truth by maximizing the total
pairwise F-measure, then overlap and boundary precision/recall/F and the
percentage of ground-truth objects hit at F >= 0.75 are computed from the
matching. Degenerate 0/0 ratios resolve to 1 so that empty-vs-empty scenes
score perfect and spurious-free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage, optimize

from .core import rle_decode
from .errors import DatasetError, InvalidDimensions

BOUNDARY_TOLERANCE_PX = 2


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple            # (pred index, gt index) pairs, at most one each
    scores: tuple           # pairwise F of each pair, aligned with `pairs`


@dataclass(frozen=True)
class MetricsReport:
    overlap: tuple          # (P, R, F)
    boundary: tuple         # (P, R, F)
    f75: float              # percentage in [0, 100]
    per_scene: tuple        # one dict per scene
    pixel_pooled: bool


def _dense_stack(masks):
    if not masks:
        return None
    return np.stack([rle_decode(m) for m in masks])


def pairwise_f(preds, gts):
    """Matrix of pairwise F-measures, entry (i, j) for pred i vs gt j.

    Uses F = 2|a n b| / (|a| + |b|), which equals 2PR/(P+R) and is zero
    exactly when the intersection is empty.
    """
    sizes = {m.size for m in preds} | {m.size for m in gts}
    if len(sizes) > 1:
        got = sorted((s.h, s.w) for s in sizes)
        raise InvalidDimensions(f"masks on different grids: {got}")
    out = np.zeros((len(preds), len(gts)), dtype=np.float64)
    if not preds or not gts:
        return out
    p = _dense_stack(preds).reshape(len(preds), -1).astype(np.float64)
    g = _dense_stack(gts).reshape(len(gts), -1).astype(np.float64)
    inter = p @ g.T
    denom = p.sum(axis=1)[:, None] + g.sum(axis=1)[None, :]
    np.divide(2.0 * inter, denom, out=out, where=inter > 0)
    return out


def hungarian_match(matrix):
    """Assignment of preds to gts maximizing the total score.

    Rectangular inputs leave the surplus side unmatched; zero-score pairs
    may appear in the assignment and simply contribute nothing.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise InvalidDimensions(f"expected a 2-d score matrix, got {matrix.shape}")
    if matrix.size == 0:
        return MatchResult(pairs=(), scores=())
    rows, cols = optimize.linear_sum_assignment(matrix, maximize=True)
    order = np.argsort(rows)
    pairs = tuple((int(rows[i]), int(cols[i])) for i in order)
    scores = tuple(float(matrix[r, c]) for r, c in pairs)
    return MatchResult(pairs=pairs, scores=scores)


def _ratio(num, den):
    # the 0/0 convention: an empty denominator means nothing was asked for,
    # so nothing is wrong
    return 1.0 if den == 0 else num / den


def _prf(num_p, den_p, num_r, den_r):
    p = _ratio(num_p, den_p)
    r = _ratio(num_r, den_r)
    f = 0.0 if p + r == 0 else 2.0 * p * r / (p + r)
    return p, r, f


def _overlap_counts(preds, gts, match):
    dense_p = [rle_decode(m) for m in preds]
    dense_g = [rle_decode(m) for m in gts]
    inter = sum(int((dense_p[i] & dense_g[j]).sum()) for i, j in match.pairs)
    return (inter, sum(int(d.sum()) for d in dense_p),
            inter, sum(int(d.sum()) for d in dense_g))


def overlap_prf(preds, gts, match):
    """Matched-overlap precision, recall, F over whole pixel sets."""
    return _prf(*_overlap_counts(preds, gts, match))


def _boundary(dense):
    """Mask pixels with at least one background 4-neighbor (border is bg)."""
    padded = np.pad(dense, 1, constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1]
                & padded[1:-1, :-2] & padded[1:-1, 2:])
    return dense & ~interior


def _disk(radius):
    r = int(np.floor(radius))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return (yy * yy + xx * xx) <= radius * radius


def _boundary_counts(preds, gts, match, tolerance_px):
    bd_p = [_boundary(rle_decode(m)) for m in preds]
    bd_g = [_boundary(rle_decode(m)) for m in gts]
    structure = _disk(tolerance_px) if tolerance_px > 0 else None
    num_p = num_r = 0
    for i, j in match.pairs:
        wide_g = (ndimage.binary_dilation(bd_g[j], structure=structure)
                  if structure is not None else bd_g[j])
        wide_p = (ndimage.binary_dilation(bd_p[i], structure=structure)
                  if structure is not None else bd_p[i])
        num_p += int((bd_p[i] & wide_g).sum())
        num_r += int((bd_g[j] & wide_p).sum())
    return (num_p, sum(int(b.sum()) for b in bd_p),
            num_r, sum(int(b.sum()) for b in bd_g))


def boundary_prf(preds, gts, match, tolerance_px=BOUNDARY_TOLERANCE_PX):
    """Boundary-alignment precision, recall, F with a dilation tolerance.

    A boundary pixel counts as correct when it lands within `tolerance_px`
    (a disk dilation) of the matched counterpart's boundary.
    """
    return _prf(*_boundary_counts(preds, gts, match, tolerance_px))


def _f75_counts(gts, match, threshold=0.75):
    by_gt = {j: s for (_, j), s in zip(match.pairs, match.scores)}
    good = sum(1 for j in range(len(gts)) if by_gt.get(j, 0.0) >= threshold)
    return good, len(gts)


def f75(preds, gts, match):
    """Percentage of gts whose matched pairwise F reaches 0.75 (inclusive)."""
    good, total = _f75_counts(gts, match)
    return 100.0 if total == 0 else 100.0 * good / total


def evaluate_dataset(pred_scenes, gt_scenes, tolerance_px=BOUNDARY_TOLERANCE_PX,
                     pixel_pooled=False):
    """Evaluate per-scene mask lists; returns a MetricsReport.

    The headline numbers are unweighted means over scenes; `pixel_pooled`
    switches to summing the underlying pixel counts across scenes before
    forming each ratio (larger scenes then weigh more).
    """
    if len(pred_scenes) != len(gt_scenes):
        raise DatasetError(
            f"{len(pred_scenes)} prediction scenes vs {len(gt_scenes)} gt scenes")
    per_scene = []
    totals = np.zeros(10, dtype=np.float64)
    for preds, gts in zip(pred_scenes, gt_scenes):
        match = hungarian_match(pairwise_f(preds, gts))
        o_counts = _overlap_counts(preds, gts, match)
        b_counts = _boundary_counts(preds, gts, match, tolerance_px)
        good, n_gt = _f75_counts(gts, match)
        per_scene.append({
            "overlap": _prf(*o_counts),
            "boundary": _prf(*b_counts),
            "f75": 100.0 if n_gt == 0 else 100.0 * good / n_gt,
        })
        totals += np.array([*o_counts, *b_counts, good, n_gt], dtype=np.float64)

    if not per_scene:
        raise DatasetError("no scenes to evaluate")
    if pixel_pooled:
        overlap = _prf(*totals[0:4])
        boundary = _prf(*totals[4:8])
        f75_val = 100.0 if totals[9] == 0 else 100.0 * totals[8] / totals[9]
    else:
        overlap = tuple(float(np.mean([s["overlap"][k] for s in per_scene]))
                        for k in range(3))
        boundary = tuple(float(np.mean([s["boundary"][k] for s in per_scene]))
                         for k in range(3))
        f75_val = float(np.mean([s["f75"] for s in per_scene]))
    return MetricsReport(overlap=tuple(overlap), boundary=tuple(boundary),
                         f75=f75_val, per_scene=tuple(per_scene),
                         pixel_pooled=pixel_pooled)


def render_table(rows):
    """Plain-text metrics table; `rows` maps a label to a MetricsReport."""
    header = (f"{'':<14}{'Overlap':^23}   {'Boundary':^23}   {'%75':>6}")
    sub = (f"{'':<14}{'P':>7}{'R':>8}{'F':>8}   {'P':>7}{'R':>8}{'F':>8}")
    lines = [header, sub]
    for label, rep in rows.items():
        o, b = rep.overlap, rep.boundary
        lines.append(
            f"{label:<14}{o[0]:>7.3f}{o[1]:>8.3f}{o[2]:>8.3f}   "
            f"{b[0]:>7.3f}{b[1]:>8.3f}{b[2]:>8.3f}   {rep.f75:>6.1f}")
    return "\n".join(lines)
