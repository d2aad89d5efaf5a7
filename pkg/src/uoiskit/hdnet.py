"""Residual score refinement for hierarchical mask proposals.

A small MLP reads the prompt-level token concatenated with each slot's mask
token and predicts a correction that is added to the proposer's own score.
Training targets are the true overlap against the prompted instance for
foreground prompts and exactly zero for background prompts, which teaches the
net to deflate both the inflated whole-object slot and background clutter.
"""

from dataclasses import dataclass

import numpy as np

from .core import PixelPoint, mask_iou, rle_decode
from .errors import InvalidDimensions, NumericalError, SamplingError
from .proposer import N_SLOTS, propose
from .seeding import derive_seed, rng_from
from .tinynn import (
    AdamWState,
    adamw_step,
    init_mlp,
    lr_at_epoch,
    minibatches,
    mlp_backward,
    mlp_forward,
    mlp_params,
)

HDNET_HIDDEN = (256, 256)
VAL_FRACTION = 0.1
DEFAULT_BG_FRACTION = 1.0 / 3.0


@dataclass(frozen=True)
class RefinedProposal:
    proposal: object          # MaskProposal
    refined_scores: tuple     # N_SLOTS floats


@dataclass(frozen=True, eq=False)
class HdnetSample:
    features: np.ndarray      # (N_SLOTS, 2C)
    base_scores: np.ndarray   # (N_SLOTS,)
    targets: np.ndarray       # (N_SLOTS,) in [0, 1]
    is_foreground: bool


def sample_features(proposal):
    """Per-slot net input: the prompt token, then that slot's mask token."""
    c = proposal.iou_token.shape[0]
    feats = np.empty((N_SLOTS, 2 * c), dtype=np.float64)
    feats[:, :c] = proposal.iou_token
    feats[:, c:] = proposal.mask_tokens
    return feats


def refine_scores(proposal, net):
    """Add the net's predicted correction to each slot's base score."""
    feats = sample_features(proposal)
    if net.dims[0] != feats.shape[1] or net.dims[-1] != 1:
        raise InvalidDimensions(
            f"net dims {net.dims} incompatible with feature width "
            f"{feats.shape[1]}")
    delta = mlp_forward(net, feats)[:, 0]
    refined = tuple(float(s + d)
                    for s, d in zip(proposal.base_scores, delta))
    return RefinedProposal(proposal=proposal, refined_scores=refined)


def iou_target(prompt, generated, scene):
    """Training target for one generated mask under one prompt.

    The overlap against the instance the prompt lands on, or zero when the
    prompt is on background (background masks must be driven out entirely).
    """
    for inst in scene.instances:
        if rle_decode(inst)[prompt.y, prompt.x]:
            return mask_iou(inst, generated)
    return 0.0


def hdnet_loss(pred, target):
    """Mean over prompts of the per-prompt mean squared slot error."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise InvalidDimensions(
            f"score shapes differ: {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def _sample_pixel(dense, rng):
    ys, xs = np.nonzero(dense)
    i = int(rng.integers(len(ys)))
    return PixelPoint(x=int(xs[i]), y=int(ys[i]))


def build_training_set(scenes, prompts_per_scene, bg_fraction, cfg, seed):
    """Draw prompts from every scene and label the oracle's proposals.

    Positive prompts are taken uniformly inside instance masks, cycling over
    the instances so each gets sampled; negative prompts uniformly on the
    background. Produces exactly len(scenes) * prompts_per_scene samples.
    """
    if prompts_per_scene < 1:
        raise SamplingError("need at least one prompt per scene")
    if not 0.0 <= bg_fraction <= 1.0:
        raise SamplingError(f"bg_fraction must be in [0,1], got {bg_fraction}")
    samples = []
    for i, scene in enumerate(scenes):
        scene_seed = derive_seed(seed, i)
        rng = rng_from(derive_seed(scene_seed, 0xA))
        n_bg = int(round(prompts_per_scene * bg_fraction))
        n_fg = prompts_per_scene - n_bg
        if n_fg > 0 and not scene.instances:
            raise SamplingError(f"scene {i} has no instances to prompt")
        background = ~rle_decode(scene.foreground)
        if n_bg > 0 and not background.any():
            raise SamplingError(f"scene {i} has no background pixels")
        dense_instances = [rle_decode(m) for m in scene.instances]
        prompts = []
        for j in range(n_fg):
            inst = dense_instances[j % len(dense_instances)]
            prompts.append((_sample_pixel(inst, rng), True))
        for _ in range(n_bg):
            prompts.append((_sample_pixel(background, rng), False))
        for prompt, is_fg in prompts:
            prop = propose(scene, prompt, cfg, scene_seed)
            targets = np.array([iou_target(prompt, m, scene)
                                for m in prop.masks])
            samples.append(HdnetSample(
                features=sample_features(prop),
                base_scores=np.asarray(prop.base_scores, dtype=np.float64),
                targets=targets,
                is_foreground=is_fg,
            ))
    return samples


def _stacked(samples):
    feats = np.stack([s.features for s in samples])      # (n, 4, 2C)
    bases = np.stack([s.base_scores for s in samples])   # (n, 4)
    targets = np.stack([s.targets for s in samples])     # (n, 4)
    return feats, bases, targets


def _set_loss(net, feats, bases, targets):
    n, slots, width = feats.shape
    delta = mlp_forward(net, feats.reshape(n * slots, width))
    refined = bases + delta.reshape(n, slots)
    return hdnet_loss(refined, targets)


def train_hdnet(samples, cfg, hidden=HDNET_HIDDEN):
    """Fit the refinement net; returns (net, per-epoch history).

    AdamW with the step schedule, a seeded 10% validation split, and the
    parameters restored from the epoch with the lowest validation loss.
    """
    if not samples:
        raise SamplingError("no training samples")
    feats, bases, targets = _stacked(samples)
    n, slots, width = feats.shape

    order = rng_from(derive_seed(cfg.seed, 0x5EED)).permutation(n)
    n_val = max(1, int(round(n * VAL_FRACTION))) if n > 1 else 0
    val_idx, train_idx = order[:n_val], order[n_val:]

    net = init_mlp((width, *hidden, 1), seed=cfg.seed)
    state = AdamWState.for_params(mlp_params(net))
    history = []
    best_val = np.inf
    best_params = [p.copy() for p in mlp_params(net)]

    for epoch in range(cfg.max_epochs):
        lr = lr_at_epoch(cfg, epoch)
        epoch_rng = rng_from(derive_seed(cfg.seed, 1000 + epoch))
        for batch in minibatches(len(train_idx), cfg.batch_size, epoch_rng):
            idx = train_idx[batch]
            x = feats[idx].reshape(-1, width)
            delta = mlp_forward(net, x)
            refined = bases[idx] + delta.reshape(len(idx), slots)
            err = refined - targets[idx]
            upstream = (2.0 * err / err.size).reshape(-1, 1)
            grads, _ = mlp_backward(net, x, upstream)
            adamw_step(state, mlp_params(net), grads, cfg, lr)
        train_loss = _set_loss(net, feats[train_idx], bases[train_idx],
                               targets[train_idx])
        if not np.isfinite(train_loss):
            raise NumericalError(f"training diverged at epoch {epoch}")
        if n_val:
            val_loss = _set_loss(net, feats[val_idx], bases[val_idx],
                                 targets[val_idx])
        else:
            val_loss = train_loss
        history.append({"epoch": epoch, "lr": lr,
                        "train_loss": train_loss, "val_loss": val_loss})
        if val_loss < best_val:
            best_val = val_loss
            best_params = [p.copy() for p in mlp_params(net)]

    for p, b in zip(mlp_params(net), best_params):
        p[:] = b
    return net, history
