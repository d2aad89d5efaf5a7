"""Whole-scene inference: prompts from the head, proposals, scoring, cleanup.

The stages mirror the deployed flow: predict foreground and heat, pick peak
prompts inside the foreground, ask the proposer for a 4-slot mask proposal
per prompt, refine the per-slot scores, keep the best slot per prompt, then
non-maximum suppression and a large-area filter over the survivors.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import BinaryMask, PixelPoint, from_dense, mask_area, mask_iou, rle_decode
from .errors import ConfigError
from .hdnet import RefinedProposal, refine_scores
from .hpg import (
    DEFAULT_SIGMA,
    FG_THRESHOLD,
    MAX_PEAKS,
    PEAK_THRESHOLD,
    binarize_foreground,
    select_peaks,
)
from .hpghead import predict_hpg

import numpy as np

SCORE_THRESHOLD = 0.48
NMS_IOU = 0.3
MAX_AREA = 40000          # masks larger than 200x200 px are dropped
GRID_SPACING = 16         # prompt spacing for the no-heatmap ablation

ABLATIONS = ("none", "no-hdnet", "no-heatmap", "no-foreground")


@dataclass(frozen=True)
class PipelineConfig:
    fg_threshold: float = FG_THRESHOLD
    heat_threshold: float = PEAK_THRESHOLD
    k: int = MAX_PEAKS
    score_threshold: float = SCORE_THRESHOLD
    nms_iou: float = NMS_IOU
    max_area: int = MAX_AREA
    sigma: float = DEFAULT_SIGMA
    # the reference order is NMS first, then the area filter; flip to drop
    # oversized masks before they can suppress anything
    area_filter_before_nms: bool = False

    def __post_init__(self):
        if not 0 <= self.fg_threshold <= 1:
            raise ConfigError(f"fg_threshold {self.fg_threshold} outside [0, 1]")
        if not 0 <= self.score_threshold <= 1:
            raise ConfigError(f"score_threshold {self.score_threshold} outside [0, 1]")
        if not 0 <= self.nms_iou < 1:
            raise ConfigError(f"nms_iou {self.nms_iou} outside [0, 1)")
        if self.heat_threshold < 0:
            raise ConfigError(f"heat_threshold {self.heat_threshold} negative")
        if self.k < 1:
            raise ConfigError(f"k must be at least 1, got {self.k}")
        if self.max_area < 0:
            raise ConfigError(f"max_area {self.max_area} negative")
        if not self.sigma > 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class Detection:
    mask: BinaryMask
    score: float
    prompt: PixelPoint
    slot: int


def select_best(refined, score_threshold=SCORE_THRESHOLD):
    """Best slot of one refined proposal, or None if even the best is weak.

    Ties go to the lowest slot index; a max exactly at the threshold is kept
    (only strictly weaker maxima are dropped).
    """
    scores = refined.refined_scores
    best = max(range(len(scores)), key=lambda i: (scores[i], -i))
    if scores[best] < score_threshold:
        return None
    return Detection(mask=refined.proposal.masks[best],
                     score=float(scores[best]),
                     prompt=refined.proposal.prompt,
                     slot=best)


def nms(detections, iou_threshold=NMS_IOU):
    """Greedy suppression by descending score; ties keep earlier prompts.

    A detection is dropped when its mask overlaps any already-kept mask with
    IoU strictly above the threshold. Survivors come back in greedy order.
    """
    order = sorted(range(len(detections)),
                   key=lambda i: (-detections[i].score, i))
    kept = []
    for i in order:
        d = detections[i]
        if all(mask_iou(d.mask, k.mask) <= iou_threshold for k in kept):
            kept.append(d)
    return kept


def area_filter(detections, max_area=MAX_AREA):
    """Drop oversized masks; a mask exactly at the limit is kept."""
    return [d for d in detections if mask_area(d.mask) <= max_area]


def _grid_prompts(fg, k, spacing=GRID_SPACING):
    """Row-major lattice prompts inside the foreground (heatmap ablation)."""
    dense = rle_decode(fg)
    h, w = dense.shape
    pts = []
    for y in range(spacing // 2, h, spacing):
        for x in range(spacing // 2, w, spacing):
            if dense[y, x]:
                pts.append(PixelPoint(x=x, y=y))
    return pts[:k]


def infer_scene(scene, hpg_net, hdnet_net, proposer, cfg=PipelineConfig(),
                seed=0, ablation="none"):
    """Run the full pipeline on one scene; returns the final Detection list.

    `ablation` switches off one stage at a time: "no-hdnet" scores by the
    proposer's base scores, "no-heatmap" swaps peak prompts for a fixed
    lattice, "no-foreground" drops the foreground gate on peak selection.
    """
    if ablation not in ABLATIONS:
        raise ConfigError(f"unknown ablation {ablation!r}")
    if hpg_net is None:
        raise ConfigError("no prompt-head checkpoint loaded")
    if hdnet_net is None and ablation != "no-hdnet":
        raise ConfigError("no refinement checkpoint loaded")

    logits, heat = predict_hpg(hpg_net, scene.image)
    if ablation == "no-foreground":
        fg = from_dense(np.ones((scene.size.h, scene.size.w), dtype=bool))
    else:
        fg = binarize_foreground(logits, cfg.fg_threshold)

    if ablation == "no-heatmap":
        prompts = _grid_prompts(fg, cfg.k)
    else:
        peaks = select_peaks(heat, fg, k=cfg.k, threshold=cfg.heat_threshold)
        prompts = [kp.point for kp in peaks]

    detections = []
    for prompt in prompts:
        proposal = proposer.propose(scene, prompt, seed)
        if ablation == "no-hdnet":
            refined = RefinedProposal(proposal=proposal,
                                      refined_scores=tuple(proposal.base_scores))
        else:
            refined = refine_scores(proposal, hdnet_net)
        det = select_best(refined, cfg.score_threshold)
        if det is not None:
            detections.append(det)

    if cfg.area_filter_before_nms:
        detections = area_filter(detections, cfg.max_area)
        detections = nms(detections, cfg.nms_iou)
    else:
        detections = nms(detections, cfg.nms_iou)
        detections = area_filter(detections, cfg.max_area)
    return detections
