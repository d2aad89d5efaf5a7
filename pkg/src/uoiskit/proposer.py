"""Pluggable hierarchical mask proposer.

Stands in for a frozen promptable segmenter: given a point prompt it returns
four candidate masks (slots: default, whole, part, subpart) with confidence
scores and token embeddings. The oracle implementation fabricates candidates
from ground truth with controllable defects, the two baked in being an
inflated score on the oversized "whole" slot and plausible-looking scores on
background clutter. A replay implementation serves recorded proposals from a
file for regression runs.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import BinaryMask, PixelPoint, from_dense, mask_area, mask_iou, rle_decode
from .errors import ConfigError, DatasetError, InvalidPrompt
from .seeding import derive_seed, rng_from
from .synthgen import mask_from_record, mask_record, smooth_field

SLOTS = ("default", "whole", "part", "subpart")
SLOT_DEFAULT, SLOT_WHOLE, SLOT_PART, SLOT_SUBPART = range(4)
N_SLOTS = 4
STAT_DIMS = 10
TOKEN_CHANNELS = 256


@dataclass(frozen=True)
class OracleConfig:
    """Knobs for the synthetic proposer's failure modes."""

    whole_bias: float = 0.3
    boundary_noise: float = 3.0
    score_noise: float = 0.05
    token_noise: float = 0.05
    channels: int = TOKEN_CHANNELS

    def __post_init__(self):
        if self.channels < 8:
            raise ConfigError(f"channels must be >= 8, got {self.channels}")
        for name in ("boundary_noise", "score_noise", "token_noise"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")


@dataclass(frozen=True, eq=False)
class MaskProposal:
    prompt: PixelPoint
    masks: tuple            # exactly N_SLOTS BinaryMask
    base_scores: tuple      # N_SLOTS floats in [0, 1]
    iou_token: np.ndarray   # (channels,)
    mask_tokens: np.ndarray  # (N_SLOTS, channels)

    def __eq__(self, other):
        if not isinstance(other, MaskProposal):
            return NotImplemented
        return (self.prompt == other.prompt
                and self.masks == other.masks
                and self.base_scores == other.base_scores
                and np.array_equal(self.iou_token, other.iou_token)
                and np.array_equal(self.mask_tokens, other.mask_tokens))


def _boundary_count(dense):
    p = np.pad(dense, 1, constant_values=False)
    interior = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    return int(np.count_nonzero(dense & ~interior))


def _noised_copy(dense, amplitude, rng, cell=5):
    """Corrupt a mask's boundary with a smooth signed perturbation.

    Zero amplitude returns an identical copy. The perturbation is bounded, so
    only pixels within `amplitude` of the contour can flip. If the requested
    amplitude would wipe a small mask out entirely the amplitude is halved
    until something survives (never silently returning a perfect copy, which
    would invert the intended quality ordering of the slots).
    """
    if amplitude == 0.0:
        return dense.copy()
    inside = ndimage.distance_transform_edt(dense)
    outside = ndimage.distance_transform_edt(~dense)
    signed = np.where(dense, inside - 0.5, -(outside - 0.5))
    field = smooth_field(rng, dense.shape[0], dense.shape[1], cell=cell)
    while amplitude > 0.25:
        out = (signed + amplitude * field) > 0.0
        if out.any():
            return out
        amplitude *= 0.5
    # deepest interior pixel as a last resort
    out = np.zeros_like(dense)
    flat = int(np.argmax(np.where(dense, inside, -np.inf)))
    out[np.unravel_index(flat, dense.shape)] = True
    return out


def _disk(radius):
    r = int(np.ceil(radius))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return (yy * yy + xx * xx) <= radius * radius


def _merge_partner(dense_instances, idx):
    """Index of the instance to absorb into the whole slot, or None."""
    di = dense_instances[idx]
    dil = ndimage.binary_dilation(di)
    best = None
    best_contact = 0
    for j, dj in enumerate(dense_instances):
        if j == idx:
            continue
        contact = int(np.count_nonzero(dil & dj))
        if contact > best_contact:
            best, best_contact = j, contact
    if best is not None:
        return best
    # nobody touches: fall back to the nearest centroid
    cy, cx = ndimage.center_of_mass(di)
    best_d = np.inf
    for j, dj in enumerate(dense_instances):
        if j == idx:
            continue
        oy, ox = ndimage.center_of_mass(dj)
        d = (oy - cy) ** 2 + (ox - cx) ** 2
        if d < best_d:
            best, best_d = j, d
    return best


def _prompt_component(dense, prompt):
    """Connected component of a mask containing the prompt pixel."""
    labels, n = ndimage.label(dense)
    tag = labels[prompt.y, prompt.x]
    if tag == 0:
        return dense
    return labels == tag


def _background_blob(size, prompt, rng):
    """A ragged clutter region near the prompt, well under object size."""
    radius = float(rng.uniform(5.0, 12.0))
    level = float(rng.uniform(-0.2, 0.2))
    field = smooth_field(rng, size.h, size.w, cell=4)
    yy = np.arange(size.h)[:, None] - prompt.y
    xx = np.arange(size.w)[None, :] - prompt.x
    blob = ((yy * yy + xx * xx) <= radius * radius) & (field > level)
    blob[prompt.y, prompt.x] = True
    return _prompt_component(blob, prompt)


def synth_tokens(mask, prompt, base_score, slot, cfg, seed):
    """Token embedding for one candidate mask.

    The first STAT_DIMS components are deterministic statistics (area
    fraction, boundary-to-area ratio, centroid offset from the prompt, slot
    one-hot, base score, contains-prompt flag); the rest is seeded Gaussian
    noise. True mask quality stays recoverable by regression on these.
    """
    dense = rle_decode(mask)
    h, w = dense.shape
    stats = np.zeros(STAT_DIMS, dtype=np.float64)
    area = int(dense.sum())
    stats[0] = area / dense.size
    if area:
        stats[1] = _boundary_count(dense) / area
        cy, cx = ndimage.center_of_mass(dense)
        stats[2] = (cx - prompt.x) / w
        stats[3] = (cy - prompt.y) / h
    stats[4 + slot] = 1.0
    stats[8] = base_score
    stats[9] = 1.0 if area and dense[prompt.y, prompt.x] else 0.0
    token = np.zeros(cfg.channels, dtype=np.float64)
    n = min(STAT_DIMS, cfg.channels)
    token[:n] = stats[:n]
    if cfg.channels > STAT_DIMS and cfg.token_noise > 0:
        rng = rng_from(seed)
        token[STAT_DIMS:] = rng.normal(0.0, cfg.token_noise,
                                       cfg.channels - STAT_DIMS)
    return token


def _iou_token(prompt, size, base_scores, dense_masks, cfg, seed):
    """Prompt-level embedding built only from the proposal itself."""
    token = np.zeros(cfg.channels, dtype=np.float64)
    token[0] = prompt.x / max(size.w - 1, 1)
    token[1] = prompt.y / max(size.h - 1, 1)
    scores = np.asarray(base_scores)
    token[2] = scores.mean()
    token[3] = scores.max()
    token[4] = scores.min()
    token[5] = scores.std()
    pair_ious = []
    for i in range(N_SLOTS):
        for j in range(i + 1, N_SLOTS):
            inter = np.count_nonzero(dense_masks[i] & dense_masks[j])
            union = np.count_nonzero(dense_masks[i] | dense_masks[j])
            pair_ious.append(1.0 if union == 0 else inter / union)
    token[6] = float(np.mean(pair_ious))
    union_all = dense_masks[0]
    for d in dense_masks[1:]:
        union_all = union_all | d
    token[7] = np.count_nonzero(union_all) / (size.h * size.w)
    if cfg.channels > STAT_DIMS and cfg.token_noise > 0:
        rng = rng_from(seed)
        token[STAT_DIMS:] = rng.normal(0.0, cfg.token_noise,
                                       cfg.channels - STAT_DIMS)
    return token


def propose(scene, prompt, cfg, seed):
    """Fabricate a 4-slot mask proposal for one point prompt.

    On an instance, the slots are: a strict subregion around the prompt
    (subpart), a boundary-noised copy (part), the instance merged with its
    closest neighbor (whole), and an independently noised copy at double
    amplitude (default). Base scores are the true overlaps against the
    prompted instance, except the whole slot gets a configurable inflation.
    On background, all four slots are ragged clutter blobs whose scores are
    drawn high enough to look plausible. Deterministic per
    (scene, prompt, cfg, seed).
    """
    size = scene.size
    if not (0 <= prompt.x < size.w and 0 <= prompt.y < size.h):
        raise InvalidPrompt(f"prompt {prompt} outside {size.w}x{size.h}")
    base_seed = derive_seed(seed, prompt.y * size.w + prompt.x)
    rng = rng_from(base_seed)

    dense_instances = [rle_decode(m) for m in scene.instances]
    hit = None
    for idx, d in enumerate(dense_instances):
        if d[prompt.y, prompt.x]:
            hit = idx
            break

    if hit is not None:
        di = dense_instances[hit]
        area = int(di.sum())
        req = np.sqrt(area / np.pi)
        # corruption scales with object size so small instances are not
        # obliterated; the default slot is re-noised independently at triple
        # amplitude so the two generic slots stay separable in true overlap
        amp = min(cfg.boundary_noise, 0.3 * req)
        part = _noised_copy(di, amp, rng)
        default = _noised_copy(di, 3.0 * amp, rng)
        partner = _merge_partner(dense_instances, hit)
        if partner is None:
            whole = ndimage.binary_dilation(di, structure=_disk(3.0))
        else:
            whole = di | dense_instances[partner]
        # the oversized level always overshoots by a good fraction of the
        # object, whatever the absorbed neighbor contributed; growth stops
        # once the image is saturated, so near-full-frame instances just get
        # the whole frame back
        target = int(np.ceil(1.45 * area))
        while int(whole.sum()) < target and not whole.all():
            whole = ndimage.binary_dilation(whole)
        sub_radius = max(2.0, 0.5 * np.sqrt(area / np.pi))
        yy = np.arange(size.h)[:, None] - prompt.y
        xx = np.arange(size.w)[None, :] - prompt.x
        subpart = _prompt_component(
            di & ((yy * yy + xx * xx) <= sub_radius * sub_radius), prompt)
        slot_dense = [default, whole, part, subpart]
        gt = from_dense(di)
        raw = np.array([mask_iou(from_dense(d), gt) for d in slot_dense])
    else:
        slot_dense = [_background_blob(size, prompt, rng)
                      for _ in range(N_SLOTS)]
        raw = rng.uniform(0.3, 0.9, size=N_SLOTS)

    raw = raw.astype(np.float64)
    raw[SLOT_WHOLE] += cfg.whole_bias
    if cfg.score_noise > 0:
        raw += rng.normal(0.0, cfg.score_noise, size=N_SLOTS)
    base_scores = tuple(float(v) for v in np.clip(raw, 0.0, 1.0))

    masks = tuple(from_dense(d) for d in slot_dense)
    mask_tokens = np.stack([
        synth_tokens(masks[k], prompt, base_scores[k], k, cfg,
                     derive_seed(base_seed, 16 + k))
        for k in range(N_SLOTS)
    ])
    iou_token = _iou_token(prompt, size, base_scores, slot_dense, cfg,
                           derive_seed(base_seed, 15))
    return MaskProposal(prompt=prompt, masks=masks, base_scores=base_scores,
                        iou_token=iou_token, mask_tokens=mask_tokens)


def true_slot_ious(scene, proposal):
    """Overlap of each slot against the instance under the prompt (GT side).

    Background prompts have no owning instance, so every slot reads 0.
    """
    p = proposal.prompt
    owner = None
    for mask in scene.instances:
        if rle_decode(mask)[p.y, p.x]:
            owner = mask
            break
    if owner is None:
        return np.zeros(N_SLOTS)
    return np.array([mask_iou(m, owner) for m in proposal.masks])


class OracleProposer:
    """Synthesizes proposals from ground truth (the default implementation)."""

    name = "oracle"

    def __init__(self, cfg=OracleConfig()):
        self.cfg = cfg

    def propose(self, scene, prompt, seed):
        return propose(scene, prompt, self.cfg, seed)


def _replay_key(prompt, seed):
    return f"{seed}:{prompt.x}:{prompt.y}"


class RecordingProposer:
    """Wraps a proposer and remembers every proposal for later replay."""

    def __init__(self, inner):
        self.inner = inner
        self.records = {}

    def propose(self, scene, prompt, seed):
        out = self.inner.propose(scene, prompt, seed)
        self.records[_replay_key(prompt, seed)] = out
        return out

    def save(self, path):
        payload = {key: proposal_record(p)
                   for key, p in sorted(self.records.items())}
        Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n")
        return path


class ReplayProposer:
    """Serves proposals recorded by RecordingProposer.save."""

    name = "replay"

    def __init__(self, path):
        try:
            payload = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DatasetError(f"cannot read proposal log {path}: {exc}") from exc
        self._table = {k: proposal_from_record(v) for k, v in payload.items()}

    def propose(self, scene, prompt, seed):
        key = _replay_key(prompt, seed)
        if key not in self._table:
            raise DatasetError(f"no recorded proposal for {key}")
        return self._table[key]


def proposal_record(p):
    """JSON-safe dict for one proposal (floats round-trip exactly)."""
    return {
        "prompt": [p.prompt.x, p.prompt.y],
        "masks": [mask_record(m) for m in p.masks],
        "base_scores": list(p.base_scores),
        "iou_token": p.iou_token.tolist(),
        "mask_tokens": p.mask_tokens.tolist(),
    }


def proposal_from_record(d):
    try:
        prompt = PixelPoint(x=int(d["prompt"][0]), y=int(d["prompt"][1]))
        masks = tuple(mask_from_record(m) for m in d["masks"])
        scores = tuple(float(s) for s in d["base_scores"])
        iou_token = np.asarray(d["iou_token"], dtype=np.float64)
        mask_tokens = np.asarray(d["mask_tokens"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"malformed proposal record: {exc}") from exc
    if len(masks) != N_SLOTS or mask_tokens.shape[0] != N_SLOTS:
        raise DatasetError("proposal record does not have 4 slots")
    return MaskProposal(prompt=prompt, masks=masks, base_scores=scores,
                        iou_token=iou_token, mask_tokens=mask_tokens)


def make_proposer(kind, cfg=OracleConfig(), replay_path=None):
    """Instantiate a registered proposer by name ('oracle' or 'replay')."""
    if kind == "oracle":
        return OracleProposer(cfg)
    if kind == "replay":
        if replay_path is None:
            raise ConfigError("replay proposer needs a recording path")
        return ReplayProposer(replay_path)
    raise ConfigError(f"unknown proposer {kind!r}")
