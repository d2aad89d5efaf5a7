"""Tests for whole-scene inference and post-processing."""

import numpy as np
import pytest

from uoiskit.core import (
    BinaryMask,
    ImageSize,
    PixelPoint,
    from_dense,
    mask_area,
    mask_iou,
    rle_decode,
)
from uoiskit.errors import ConfigError
from uoiskit.hdnet import RefinedProposal
from uoiskit.hpg import binarize_foreground
from uoiskit.hpghead import FEATURE_WIDTH, predict_hpg
from uoiskit.pipeline import (
    Detection,
    PipelineConfig,
    area_filter,
    infer_scene,
    nms,
    select_best,
)
from uoiskit.proposer import MaskProposal, OracleConfig, OracleProposer
from uoiskit.synthgen import Scene, SceneConfig, generate_dataset
from uoiskit.tinynn import init_mlp

QUIET = OracleConfig(whole_bias=0.0, boundary_noise=0.0, score_noise=0.0,
                     token_noise=0.0, channels=16)
NOISY16 = OracleConfig(channels=16)


def zeroed_net(dims, seed=0):
    net = init_mlp(dims, seed=seed)
    for w in net.weights:
        w[:] = 0.0
    for b in net.biases:
        b[:] = 0.0
    return net


def saturation_net(a=20.0):
    """Hand-built head: foreground and heat both from |R - G| saturation."""
    net = zeroed_net((FEATURE_WIDTH, 2, 3))
    net.weights[0][0, 0] = a
    net.weights[0][1, 0] = -a   # h0 = relu(a (R - G))
    net.weights[0][0, 1] = -a
    net.weights[0][1, 1] = a    # h1 = relu(a (G - R))
    net.weights[1][0, 1] = 1.0
    net.weights[1][1, 1] = 1.0  # fg logit = h0 + h1
    net.weights[1][0, 2] = 1.0
    net.weights[1][1, 2] = 1.0
    net.biases[1][2] = -2.0     # heat = sigmoid(h0 + h1 - 2)
    return net


def constant_net(fg_logit_bg, fg_logit_fg, heat_logit):
    net = zeroed_net((FEATURE_WIDTH, 3))
    net.biases[0][:] = [fg_logit_bg, fg_logit_fg, heat_logit]
    return net


def red_square_scene(size=64, lo=24, hi=40):
    image = np.full((size, size, 3), 128, dtype=np.uint8)
    image[lo:hi, lo:hi] = (255, 0, 0)
    dense = np.zeros((size, size), dtype=bool)
    dense[lo:hi, lo:hi] = True
    mask = from_dense(dense)
    return Scene(image=image, instances=(mask,), foreground=mask)


def refined_with_scores(scores):
    masks = []
    for i in range(4):
        dense = np.zeros((4, 4), dtype=bool)
        dense[i, 0] = True
        masks.append(from_dense(dense))
    prop = MaskProposal(prompt=PixelPoint(x=1, y=1), masks=tuple(masks),
                        base_scores=tuple(scores), iou_token=np.zeros(8),
                        mask_tokens=np.zeros((4, 8)))
    return RefinedProposal(proposal=prop, refined_scores=tuple(float(s) for s in scores))


def row_mask(total, start, stop):
    dense = np.zeros((1, total), dtype=bool)
    dense[0, start:stop] = True
    return from_dense(dense)


# -------------------------------------------------------------- select_best

def test_select_best_takes_argmax_slot():
    det = select_best(refined_with_scores([0.2, 0.9, 0.5, 0.5]))
    assert det is not None and det.slot == 1 and det.score == 0.9


def test_select_best_breaks_ties_toward_lowest_slot():
    det = select_best(refined_with_scores([0.6, 0.6, 0.1, 0.1]))
    assert det is not None and det.slot == 0


def test_select_best_drops_weak_proposals():
    assert select_best(refined_with_scores([0.2, 0.4, 0.47, 0.3])) is None


def test_select_best_keeps_score_exactly_at_threshold():
    det = select_best(refined_with_scores([0.1, 0.48, 0.2, 0.3]))
    assert det is not None and det.slot == 1


# --------------------------------------------------------------------- nms

def test_nms_keeps_higher_scored_of_identical_masks():
    mask = row_mask(20, 3, 11)
    dets = [Detection(mask, 0.8, PixelPoint(x=0, y=0), 0),
            Detection(mask, 0.9, PixelPoint(x=1, y=0), 0)]
    kept = nms(dets)
    assert len(kept) == 1 and kept[0].score == 0.9


def test_nms_keeps_disjoint_masks():
    dets = [Detection(row_mask(30, 0, 5), 0.5, PixelPoint(x=0, y=0), 0),
            Detection(row_mask(30, 10, 15), 0.4, PixelPoint(x=1, y=0), 0),
            Detection(row_mask(30, 20, 25), 0.3, PixelPoint(x=2, y=0), 0)]
    assert len(nms(dets)) == 3


def test_nms_boundary_cases_around_threshold():
    # overlap 30/96 ~ 0.3125 suppresses, 29/97 ~ 0.2990 does not,
    # and exactly 6/20 = 0.3 is kept (suppression is strictly above)
    a = row_mask(200, 0, 63)
    over = row_mask(200, 33, 96)     # IoU 0.3125
    under = row_mask(200, 34, 97)    # IoU 0.2990
    assert mask_iou(a, over) > 0.3 > mask_iou(a, under)
    high = Detection(a, 0.9, PixelPoint(x=0, y=0), 0)
    assert len(nms([high, Detection(over, 0.5, PixelPoint(x=1, y=0), 0)])) == 1
    assert len(nms([high, Detection(under, 0.5, PixelPoint(x=1, y=0), 0)])) == 2

    b = row_mask(40, 0, 13)
    at = row_mask(40, 7, 20)         # IoU exactly 6/20 = 0.3
    assert mask_iou(b, at) == 0.3
    assert len(nms([Detection(b, 0.9, PixelPoint(x=0, y=0), 0),
                    Detection(at, 0.5, PixelPoint(x=1, y=0), 0)])) == 2


def test_nms_tie_prefers_earlier_prompt_order():
    mask = row_mask(20, 0, 10)
    also = row_mask(20, 2, 12)       # IoU 8/12 = 0.667 with mask
    first = Detection(mask, 0.7, PixelPoint(x=5, y=0), 0)
    second = Detection(also, 0.7, PixelPoint(x=6, y=0), 0)
    kept = nms([first, second])
    assert kept == [first]


# ------------------------------------------------------------- area filter

def test_area_filter_boundaries():
    big = np.zeros((210, 210), dtype=bool)
    big[:200, :200] = True
    over = np.zeros((210, 210), dtype=bool)
    over[:200, :200] = True
    over[205, 205] = True
    keep = Detection(from_dense(big), 0.9, PixelPoint(x=0, y=0), 0)
    drop = Detection(from_dense(over), 0.9, PixelPoint(x=0, y=0), 0)
    assert mask_area(keep.mask) == 40000 and mask_area(drop.mask) == 40001
    assert area_filter([keep, drop]) == [keep]
    assert area_filter([]) == []


# ------------------------------------------------------------------ config

def test_pipeline_config_rejects_bad_values():
    with pytest.raises(ConfigError):
        PipelineConfig(fg_threshold=1.5)
    with pytest.raises(ConfigError):
        PipelineConfig(nms_iou=1.0)
    with pytest.raises(ConfigError):
        PipelineConfig(k=0)
    with pytest.raises(ConfigError):
        PipelineConfig(sigma=0.0)
    with pytest.raises(ConfigError):
        PipelineConfig(score_threshold=-0.1)


# ------------------------------------------------------------- infer_scene

def test_blank_scene_yields_no_detections():
    image = np.full((48, 48, 3), 128, dtype=np.uint8)
    empty = from_dense(np.zeros((48, 48), dtype=bool))
    scene = Scene(image=image, instances=(), foreground=empty)
    net = constant_net(5.0, -5.0, 0.0)   # foreground probability ~ 0
    hdnet = zeroed_net((32, 4, 1))
    dets = infer_scene(scene, net, hdnet, OracleProposer(QUIET), seed=1)
    assert dets == []


def test_single_object_noise_free_end_to_end():
    scene = red_square_scene()
    dets = infer_scene(scene, saturation_net(), zeroed_net((32, 4, 1)),
                       OracleProposer(QUIET), seed=5)
    assert len(dets) == 1
    assert mask_iou(dets[0].mask, scene.instances[0]) == 1.0
    assert dets[0].score == 1.0


def test_missing_nets_raise_config_error():
    scene = red_square_scene()
    with pytest.raises(ConfigError):
        infer_scene(scene, None, zeroed_net((32, 4, 1)), OracleProposer(QUIET))
    with pytest.raises(ConfigError):
        infer_scene(scene, saturation_net(), None, OracleProposer(QUIET))
    with pytest.raises(ConfigError):
        infer_scene(scene, saturation_net(), zeroed_net((32, 4, 1)),
                    OracleProposer(QUIET), ablation="no-everything")


SMALL = SceneConfig(size=ImageSize(64, 80), min_objects=2, max_objects=4,
                    texture_amplitude=0.1, clutter_amplitude=0.1)


def test_zero_weight_refinement_equals_no_hdnet_ablation():
    scenes = generate_dataset(SMALL, 6, seed=23)
    net = saturation_net()
    zero = zeroed_net((32, 64, 1))
    proposer = OracleProposer(NOISY16)
    for i, scene in enumerate(scenes):
        full = infer_scene(scene, net, zero, proposer, seed=i)
        base = infer_scene(scene, net, None, proposer, seed=i, ablation="no-hdnet")
        assert full == base


def test_inference_is_deterministic():
    scenes = generate_dataset(SMALL, 3, seed=31)
    net = saturation_net()
    zero = zeroed_net((32, 4, 1))
    proposer = OracleProposer(NOISY16)
    for i, scene in enumerate(scenes):
        a = infer_scene(scene, net, zero, proposer, seed=i)
        b = infer_scene(scene, net, zero, proposer, seed=i)
        assert a == b


def test_nms_idempotent_and_survivors_weakly_overlapping():
    scenes = generate_dataset(SMALL, 4, seed=37)
    net = saturation_net()
    zero = zeroed_net((32, 4, 1))
    proposer = OracleProposer(NOISY16)
    cfg = PipelineConfig()
    for i, scene in enumerate(scenes):
        dets = infer_scene(scene, net, zero, proposer, cfg, seed=i)
        assert nms(dets, cfg.nms_iou) == dets
        for j in range(len(dets)):
            for k in range(j + 1, len(dets)):
                assert mask_iou(dets[j].mask, dets[k].mask) <= cfg.nms_iou


def test_detection_prompts_lie_in_predicted_foreground():
    scenes = generate_dataset(SMALL, 4, seed=41)
    net = saturation_net()
    zero = zeroed_net((32, 4, 1))
    proposer = OracleProposer(NOISY16)
    for i, scene in enumerate(scenes):
        logits, _ = predict_hpg(net, scene.image)
        fg = rle_decode(binarize_foreground(logits))
        for det in infer_scene(scene, net, zero, proposer, seed=i):
            assert fg[det.prompt.y, det.prompt.x]


def test_raising_score_threshold_never_adds_detections():
    scenes = generate_dataset(SMALL, 4, seed=43)
    net = saturation_net()
    zero = zeroed_net((32, 4, 1))
    proposer = OracleProposer(NOISY16)
    for i, scene in enumerate(scenes):
        counts = []
        for thr in (0.3, 0.48, 0.6, 0.9):
            cfg = PipelineConfig(score_threshold=thr)
            counts.append(len(infer_scene(scene, net, zero, proposer, cfg, seed=i)))
        assert counts == sorted(counts, reverse=True)


def test_no_heatmap_ablation_prompts_on_lattice():
    image = np.full((64, 64, 3), 128, dtype=np.uint8)
    dense = np.ones((64, 64), dtype=bool)
    scene = Scene(image=image, instances=(from_dense(dense),),
                  foreground=from_dense(dense))
    net = constant_net(-5.0, 5.0, -10.0)   # fg everywhere, heat ~ 0
    dets = infer_scene(scene, net, None, OracleProposer(QUIET), seed=2,
                       ablation="no-hdnet")
    assert dets == []   # heat below the peak threshold, no prompts

    grid = infer_scene(scene, net, zeroed_net((32, 4, 1)),
                       OracleProposer(QUIET), seed=2, ablation="no-heatmap")
    assert grid
    for det in grid:
        assert det.prompt.x % 16 == 8 and det.prompt.y % 16 == 8


def test_no_foreground_ablation_keeps_background_peaks():
    image = np.full((48, 48, 3), 128, dtype=np.uint8)
    empty = from_dense(np.zeros((48, 48), dtype=bool))
    scene = Scene(image=image, instances=(), foreground=empty)
    net = constant_net(5.0, -5.0, 1.0)   # no fg, heat ~ 0.73 everywhere
    gated = infer_scene(scene, net, zeroed_net((32, 4, 1)),
                        OracleProposer(NOISY16), seed=7)
    assert gated == []
    unchecked = infer_scene(scene, net, zeroed_net((32, 4, 1)),
                            OracleProposer(NOISY16), seed=7,
                            ablation="no-foreground")
    assert len(unchecked) > 0


class _CannedProposer:
    """Returns the big mask for the first prompt, the small one after."""

    def __init__(self, big, small):
        self.big = big
        self.small = small
        self.calls = 0

    def propose(self, scene, prompt, seed):
        mask = self.big if self.calls == 0 else self.small
        self.calls += 1
        score = 0.9 if self.calls == 1 else 0.8
        return MaskProposal(prompt=prompt, masks=(mask,) * 4,
                            base_scores=(score, 0.0, 0.0, 0.0),
                            iou_token=np.zeros(8), mask_tokens=np.zeros((4, 8)))


def test_area_filter_order_flag_changes_outcome():
    # a big over-limit mask wins NMS and then gets area-filtered, killing
    # the small overlapping mask it suppressed; flipping the order saves it
    scene = red_square_scene(size=224, lo=100, hi=116)
    big = np.zeros((224, 224), dtype=bool)
    big[0:210, 0:210] = True
    small = np.zeros((224, 224), dtype=bool)
    small[0:120, 0:120] = True
    big_m, small_m = from_dense(big), from_dense(small)
    assert mask_area(big_m) > 40000 >= mask_area(small_m)
    assert mask_iou(big_m, small_m) > 0.3

    after = infer_scene(scene, saturation_net(),
                        None, _CannedProposer(big_m, small_m),
                        PipelineConfig(), seed=0, ablation="no-hdnet")
    assert after == []
    before = infer_scene(scene, saturation_net(),
                         None, _CannedProposer(big_m, small_m),
                         PipelineConfig(area_filter_before_nms=True),
                         seed=0, ablation="no-hdnet")
    assert len(before) == 1 and before[0].mask == small_m
