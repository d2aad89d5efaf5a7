"""Trainable prompt-generation head over handcrafted pixel features.

A small per-pixel MLP maps an 8-dim feature vector (color, position, local
statistics) to two foreground logits and one heatmap logit. On the synthetic
desk scenes this stands in for a heavy learned backbone: the scenes are
separable with local features, so a tiny net trained in seconds suffices.
"""

from __future__ import annotations

import numpy as np

from .core import rle_decode
from .errors import InvalidDimensions, NumericalError, SamplingError
from .hpg import GaussianSpec, build_gt_heatmap, heatmap_mse
from .synthgen import derive_seed, rng_from
from .tinynn import (
    AdamWState,
    TrainConfig,
    adamw_step,
    init_mlp,
    lr_at_epoch,
    minibatches,
    mlp_backward,
    mlp_forward,
    mlp_params,
)

FEATURE_WIDTH = 8
WINDOW_RADIUS = 2            # 5x5 local statistics window
PIXELS_PER_STEP = 4096       # per-image subsample during training
DEFAULT_HIDDEN = (32,)
VAL_FRACTION = 0.1

# loss weights: the foreground term is kept small so the heatmap
# regression dominates, matching hpg_loss defaults
W_FG = 0.1
W_H = 1.0


def _box_sum(a, radius):
    """Sum of `a` over a (2r+1)^2 window around each pixel, clipped at borders."""
    h, w = a.shape
    ii = np.zeros((h + 1, w + 1), dtype=a.dtype)
    ii[1:, 1:] = a.cumsum(axis=0).cumsum(axis=1)
    y0 = np.clip(np.arange(h) - radius, 0, h)
    y1 = np.clip(np.arange(h) + radius + 1, 0, h)
    x0 = np.clip(np.arange(w) - radius, 0, w)
    x1 = np.clip(np.arange(w) + radius + 1, 0, w)
    return (ii[np.ix_(y1, x1)] - ii[np.ix_(y0, x1)]
            - ii[np.ix_(y1, x0)] + ii[np.ix_(y0, x0)])


def _window_mean_std(image, radius):
    """Clipped-window mean and std of the intensity (mean RGB in [0, 1]).

    8-bit images take an exact integer route: with s = r + g + b, the window
    variance n*sum(s^2) - sum(s)^2 is computed in int64, so constant windows
    come out at exactly zero instead of picking up cancellation noise.
    """
    h, w = image.shape[:2]
    y = np.arange(h)
    x = np.arange(w)
    ny = np.clip(y + radius + 1, 0, h) - np.clip(y - radius, 0, h)
    nx = np.clip(x + radius + 1, 0, w) - np.clip(x - radius, 0, w)
    count = ny[:, None] * nx[None, :]

    if np.issubdtype(image.dtype, np.integer):
        s = image.astype(np.int64).sum(axis=2)
        s1 = _box_sum(s, radius)
        num = _box_sum(s * s, radius) * count - s1 * s1
    else:
        s = image.astype(np.float64).sum(axis=2)
        shifted = s - s.mean()  # keeps the variance difference well conditioned
        sh1 = _box_sum(shifted, radius)
        num = np.maximum(_box_sum(shifted * shifted, radius) * count - sh1 * sh1, 0.0)
        s1 = _box_sum(s, radius)
    scale = 3.0 * 255.0
    mean = s1 / (count * scale)
    std = np.sqrt(num.astype(np.float64)) / (count * scale)
    return mean, std


def _axis_gradient(a, axis):
    # central differences inside, one-sided at the borders; a length-1
    # axis has no neighbours to difference, so its gradient is zero
    if a.shape[axis] < 2:
        return np.zeros_like(a)
    return np.gradient(a, axis=axis)


def extract_features(image):
    """Per-pixel feature grid, shape (h, w, 8).

    Channels: normalized RGB (3), normalized x and y (2), mean and standard
    deviation of intensity over a clipped 5x5 window (2), and the central
    difference gradient magnitude of intensity (1). Everything except the
    coordinate channels is translation consistent away from the borders.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[-1] != 3 or min(image.shape[:2]) < 1:
        raise InvalidDimensions(f"expected an (h, w, 3) image, got {image.shape}")
    h, w = image.shape[:2]
    rgb = image.astype(np.float64) / 255.0
    intensity = rgb.mean(axis=2)

    feats = np.empty((h, w, FEATURE_WIDTH), dtype=np.float64)
    feats[:, :, :3] = rgb
    xs = np.full(w, 0.5) if w == 1 else np.arange(w) / (w - 1.0)
    ys = np.full(h, 0.5) if h == 1 else np.arange(h) / (h - 1.0)
    feats[:, :, 3] = xs[None, :]
    feats[:, :, 4] = ys[:, None]

    mean, std = _window_mean_std(image, WINDOW_RADIUS)
    feats[:, :, 5] = mean
    feats[:, :, 6] = std

    gy = _axis_gradient(intensity, 0)
    gx = _axis_gradient(intensity, 1)
    feats[:, :, 7] = np.hypot(gx, gy)
    return feats


def _check_head(net):
    if net.dims[0] != FEATURE_WIDTH or net.dims[-1] != 3:
        raise InvalidDimensions(
            f"head must map {FEATURE_WIDTH} features to 3 outputs, got {net.dims}")


def predict_hpg(net, image):
    """Apply the head per pixel; returns (fg logits (h, w, 2), heatmap (h, w)).

    The heatmap channel goes through a logistic unit, so its values are
    bounded in [0, 1] for any input.
    """
    _check_head(net)
    feats = extract_features(image)
    h, w = feats.shape[:2]
    out = mlp_forward(net, feats.reshape(-1, FEATURE_WIDTH))
    logits = out[:, :2].reshape(h, w, 2)
    heat = (1.0 / (1.0 + np.exp(-out[:, 2]))).reshape(h, w)
    return logits, heat


def _scene_tensors(scenes, spec):
    """Flattened per-scene (features, fg labels, gt heat) triples."""
    out = []
    for scene in scenes:
        feats = extract_features(scene.image).reshape(-1, FEATURE_WIDTH)
        labels = rle_decode(scene.foreground).ravel()
        heat = build_gt_heatmap(scene.instances, scene.size, spec).ravel()
        out.append((feats, labels, heat))
    return out


def _sample_weights(labels):
    # class-balanced pixel weights, normalized to sum to one; mirrors
    # weighted_ce restricted to the sampled pixel set
    n_fg = int(labels.sum())
    n_bg = labels.size - n_fg
    weights = np.empty(labels.size, dtype=np.float64)
    if n_fg:
        weights[labels] = 1.0 / n_fg
    if n_bg:
        weights[~labels] = 1.0 / n_bg
    weights /= weights.sum()
    return weights


def _image_loss_grad(out, labels, heat, w_fg, w_h):
    """Loss and d(loss)/d(out) for one image's pixel rows (m, 3)."""
    logits = out[:, :2]
    m = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(m)
    p = e / e.sum(axis=1, keepdims=True)
    weights = _sample_weights(labels)
    ce = -np.where(labels, np.log(p[:, 1]), np.log(p[:, 0]))
    l_fg = float((weights * ce).sum())

    sig = 1.0 / (1.0 + np.exp(-out[:, 2]))
    err = sig - heat
    l_h = float(np.mean(err ** 2))

    grad = np.empty_like(out)
    onehot = np.zeros_like(p)
    onehot[np.arange(labels.size), labels.astype(int)] = 1.0
    grad[:, :2] = w_fg * weights[:, None] * (p - onehot)
    grad[:, 2] = w_h * (2.0 * err / err.size) * sig * (1.0 - sig)
    return w_fg * l_fg + w_h * l_h, grad


def _full_loss(net, tensors, indices, w_fg, w_h):
    """Mean full-image loss over the indexed scenes (no subsampling)."""
    total = 0.0
    for i in indices:
        feats, labels, heat = tensors[i]
        out = mlp_forward(net, feats)
        sig = 1.0 / (1.0 + np.exp(-out[:, 2]))
        total += (w_fg * _flat_weighted_ce(out[:, :2], labels)
                  + w_h * heatmap_mse(sig, heat))
    return total / len(indices)


def _flat_weighted_ce(logits, labels):
    # same arithmetic as hpg.weighted_ce but on flattened pixels
    m = logits - logits.max(axis=1, keepdims=True)
    logp = m - np.log(np.exp(m).sum(axis=1, keepdims=True))
    ce = np.where(labels, -logp[:, 1], -logp[:, 0])
    return float((_sample_weights(labels) * ce).sum())


def train_hpg_head(scenes, spec=GaussianSpec(), cfg=TrainConfig(),
                   hidden=DEFAULT_HIDDEN, w_fg=W_FG, w_h=W_H):
    """Fit the head on labelled scenes; returns (net, per-epoch history).

    Each step draws a fresh seeded subsample of PIXELS_PER_STEP pixels per
    image, so per-step cost is bounded regardless of resolution; validation
    uses the full-image loss. The parameters from the epoch with the lowest
    validation loss are restored before returning.
    """
    if not scenes:
        raise SamplingError("no training scenes")
    tensors = _scene_tensors(scenes, spec)
    n = len(tensors)

    order = rng_from(derive_seed(cfg.seed, 0x5EED)).permutation(n)
    n_val = max(1, int(round(n * VAL_FRACTION))) if n > 1 else 0
    val_idx, train_idx = order[:n_val], order[n_val:]

    net = init_mlp((FEATURE_WIDTH, *hidden, 3), seed=cfg.seed)
    state = AdamWState.for_params(mlp_params(net))
    history = []
    best_val = np.inf
    best_params = [p.copy() for p in mlp_params(net)]

    for epoch in range(cfg.max_epochs):
        lr = lr_at_epoch(cfg, epoch)
        epoch_rng = rng_from(derive_seed(cfg.seed, 1000 + epoch))
        for batch in minibatches(len(train_idx), cfg.batch_size, epoch_rng):
            idx = train_idx[batch]
            rows = []
            spans = []
            for i in idx:
                feats, labels, heat = tensors[i]
                n_px = labels.size
                take = min(PIXELS_PER_STEP, n_px)
                sel = epoch_rng.choice(n_px, size=take, replace=False)
                rows.append((feats[sel], labels[sel], heat[sel]))
                spans.append(take)
            x = np.concatenate([r[0] for r in rows], axis=0)
            out = mlp_forward(net, x)
            upstream = np.empty_like(out)
            stop = 0
            for (feats_s, labels_s, heat_s), take in zip(rows, spans):
                start, stop = stop, stop + take
                _, grad = _image_loss_grad(out[start:stop], labels_s, heat_s,
                                           w_fg, w_h)
                upstream[start:stop] = grad / len(idx)
            grads, _ = mlp_backward(net, x, upstream)
            adamw_step(state, mlp_params(net), grads, cfg, lr)

        train_loss = _full_loss(net, tensors, train_idx, w_fg, w_h)
        if not np.isfinite(train_loss):
            raise NumericalError(f"training diverged at epoch {epoch}")
        val_loss = (_full_loss(net, tensors, val_idx, w_fg, w_h)
                    if n_val else train_loss)
        history.append({"epoch": epoch, "lr": lr,
                        "train_loss": train_loss, "val_loss": val_loss})
        if val_loss < best_val:
            best_val = val_loss
            best_params = [p.copy() for p in mlp_params(net)]

    for p, b in zip(mlp_params(net), best_params):
        p[:] = b
    return net, history
