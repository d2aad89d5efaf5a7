"""Figures and delimited output for a finished run.

Renders overlay panels (image, ground truth, predictions), a metrics bar
chart, optional predicted-heatmap panels and training curves, and writes a
per-scene CSV next to the figures. Uses the Agg backend so it works
headless.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .core import rle_decode
from .errors import DatasetError
from .hpg import binarize_foreground
from .hpghead import predict_hpg
from .metrics import evaluate_dataset

# qualitative palette for instance overlays, cycled when scenes are busier
_COLORS = np.array([
    [230, 25, 75], [60, 180, 75], [255, 225, 25], [0, 130, 200],
    [245, 130, 48], [145, 30, 180], [70, 240, 240], [240, 50, 230],
    [210, 245, 60], [170, 110, 40],
], dtype=np.float64) / 255.0

CSV_NAME = "metrics.csv"


def _tinted(image, masks):
    """Blend each mask over the image with its own palette colour."""
    canvas = image.astype(np.float64) / 255.0
    for i, mask in enumerate(masks):
        dense = rle_decode(mask)
        color = _COLORS[i % len(_COLORS)]
        canvas[dense] = 0.45 * canvas[dense] + 0.55 * color
    return np.clip(canvas, 0.0, 1.0)


def render_overlay(path, scene, pred_masks):
    """Three panels: raw image, ground-truth instances, predicted masks."""
    fig, axes = plt.subplots(1, 3, figsize=(10, 3.2))
    axes[0].imshow(scene.image)
    axes[0].set_title("scene")
    axes[1].imshow(_tinted(scene.image, scene.instances))
    axes[1].set_title(f"ground truth ({len(scene.instances)})")
    axes[2].imshow(_tinted(scene.image, pred_masks))
    axes[2].set_title(f"predicted ({len(pred_masks)})")
    for ax in axes:
        ax.set_axis_off()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def render_heat_panel(path, scene, hpg_net):
    """Predicted heatmap beside the thresholded foreground."""
    logits, heat = predict_hpg(hpg_net, scene.image)
    fg = rle_decode(binarize_foreground(logits))
    fig, axes = plt.subplots(1, 3, figsize=(10, 3.2))
    axes[0].imshow(scene.image)
    axes[0].set_title("scene")
    im = axes[1].imshow(heat, cmap="magma", vmin=0.0, vmax=max(heat.max(), 1e-6))
    axes[1].set_title("predicted heat")
    fig.colorbar(im, ax=axes[1], fraction=0.046)
    axes[2].imshow(fg, cmap="gray")
    axes[2].set_title("predicted foreground")
    for ax in axes:
        ax.set_axis_off()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def render_metric_bars(path, report, label):
    """Overlap and boundary P/R/F plus F75 as one bar chart."""
    names = ["ov P", "ov R", "ov F", "bd P", "bd R", "bd F", "F75"]
    values = [*report.overlap, *report.boundary, report.f75 / 100.0]
    fig, ax = plt.subplots(figsize=(6, 3.2))
    bars = ax.bar(names, values, color="#4878a8")
    ax.set_ylim(0.0, 1.05)
    ax.set_title(f"metrics: {label}")
    ax.bar_label(bars, fmt="%.3f", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def load_training_log(path):
    """Epoch records from a .log.jsonl file written by the trainers."""
    p = Path(path)
    if not p.is_file():
        raise DatasetError(f"training log not found: {p}")
    rows = []
    for line in p.read_text().splitlines():
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"corrupt training log {p}: {exc}") from exc
        if rec.get("event") == "epoch":
            rows.append(rec)
    if not rows:
        raise DatasetError(f"no epoch records in training log {p}")
    return rows


def render_training_curves(path, rows):
    """Train/val loss per epoch with the lr schedule on a log twin axis."""
    epochs = [r["epoch"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.plot(epochs, [r["train_loss"] for r in rows], label="train")
    ax.plot(epochs, [r["val_loss"] for r in rows], label="val")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    twin = ax.twinx()
    twin.plot(epochs, [r["lr"] for r in rows], color="gray", alpha=0.5,
              linestyle="--", label="lr")
    twin.set_yscale("log")
    twin.set_ylabel("lr")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def write_metrics_csv(path, report):
    """Per-scene metric rows plus a trailing mean row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scene", "overlap_p", "overlap_r", "overlap_f",
                         "boundary_p", "boundary_r", "boundary_f", "f75"])
        for i, row in enumerate(report.per_scene):
            writer.writerow([i, *(f"{v:.6f}" for v in row["overlap"]),
                             *(f"{v:.6f}" for v in row["boundary"]),
                             f"{row['f75']:.2f}"])
        writer.writerow(["mean", *(f"{v:.6f}" for v in report.overlap),
                         *(f"{v:.6f}" for v in report.boundary),
                         f"{report.f75:.2f}"])
    return path


def generate_report(gt_scenes, pred_masks, out_dir, label="full",
                    train_log=None, hpg_net=None, n_panels=4):
    """Render the full figure set; returns the list of written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gts = [list(s.instances) for s in gt_scenes]
    report = evaluate_dataset(pred_masks, gts)
    written = [write_metrics_csv(out / CSV_NAME, report),
               render_metric_bars(out / "metrics.png", report, label)]
    for i in range(min(n_panels, len(gt_scenes))):
        written.append(render_overlay(out / f"overlay_{i:05d}.png",
                                      gt_scenes[i], pred_masks[i]))
        if hpg_net is not None:
            written.append(render_heat_panel(out / f"heat_{i:05d}.png",
                                             gt_scenes[i], hpg_net))
    if train_log is not None:
        rows = load_training_log(train_log)
        written.append(render_training_curves(out / "training.png", rows))
    return written
