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
from uoiskit.errors import ConfigError, DatasetError, InvalidPrompt
from uoiskit.proposer import (
    N_SLOTS,
    SLOT_PART,
    SLOT_SUBPART,
    SLOT_WHOLE,
    OracleConfig,
    OracleProposer,
    RecordingProposer,
    ReplayProposer,
    make_proposer,
    propose,
    synth_tokens,
    true_slot_ious,
)
from uoiskit.synthgen import Scene, SceneConfig, generate_scene

QUIET = OracleConfig(whole_bias=0.0, boundary_noise=0.0, score_noise=0.0,
                     token_noise=0.0, channels=16)


def scene_from_dense(*dense_instances):
    h, w = dense_instances[0].shape
    instances = tuple(from_dense(d) for d in dense_instances)
    union = np.zeros((h, w), dtype=bool)
    for d in dense_instances:
        union |= d
    return Scene(image=np.zeros((h, w, 3), dtype=np.uint8),
                 instances=instances, foreground=from_dense(union))


def touching_pair(h=64, w=64, big=((20, 40), (20, 40)), small_w=6):
    """A large square with a small block glued to its right edge."""
    a = np.zeros((h, w), dtype=bool)
    a[big[0][0]:big[0][1], big[1][0]:big[1][1]] = True
    b = np.zeros((h, w), dtype=bool)
    b[26, 40] = True  # seed so blocks touch
    b[24:32, 40:40 + small_w] = True
    return scene_from_dense(a, b)


def isolated_square(h=48, w=48):
    d = np.zeros((h, w), dtype=bool)
    d[16:32, 16:32] = True
    return scene_from_dense(d)


class TestForegroundPrompt:
    def test_noise_free_part_is_exact_copy(self):
        scene = isolated_square()
        prop = propose(scene, PixelPoint(x=24, y=24), QUIET, seed=0)
        assert prop.masks[SLOT_PART] == scene.instances[0]
        assert prop.base_scores[SLOT_PART] == 1.0

    def test_full_frame_instance_terminates(self):
        # the oversized slot grows toward 1.45x the instance area; when the
        # instance already fills the frame, growth must stop at saturation
        scene = scene_from_dense(np.ones((32, 32), dtype=bool))
        prop = propose(scene, PixelPoint(x=16, y=16), QUIET, seed=0)
        assert prop.masks[SLOT_WHOLE] == scene.instances[0]

    def test_noise_free_scores_equal_true_ious(self):
        scene = touching_pair()
        prop = propose(scene, PixelPoint(x=30, y=30), QUIET, seed=3)
        ious = true_slot_ious(scene, prop)
        assert np.allclose(prop.base_scores, ious, atol=1e-12)
        assert int(np.argmax(prop.base_scores)) == int(np.argmax(ious))

    def test_whole_bias_flips_the_argmax(self):
        scene = touching_pair()
        cfg = OracleConfig(whole_bias=0.3, boundary_noise=2.5,
                           score_noise=0.01, token_noise=0.0, channels=16)
        prop = propose(scene, PixelPoint(x=30, y=30), cfg, seed=1)
        ious = true_slot_ious(scene, prop)
        assert int(np.argmax(ious)) == SLOT_PART
        assert int(np.argmax(prop.base_scores)) == SLOT_WHOLE

    def test_whole_contains_instance_and_neighbor_pixels(self):
        scene = touching_pair()
        prop = propose(scene, PixelPoint(x=30, y=30), QUIET, seed=0)
        whole = rle_decode(prop.masks[SLOT_WHOLE])
        assert whole[30, 30] and whole[26, 42]

    def test_subpart_contains_prompt_and_stays_inside(self):
        scene = isolated_square()
        for seed in range(5):
            prop = propose(scene, PixelPoint(x=20, y=28), QUIET, seed=seed)
            sub = rle_decode(prop.masks[SLOT_SUBPART])
            inst = rle_decode(scene.instances[0])
            assert sub[28, 20]
            assert not np.any(sub & ~inst)
            assert sub.sum() < inst.sum()

    def test_lone_instance_whole_is_dilation(self):
        scene = isolated_square()
        prop = propose(scene, PixelPoint(x=24, y=24), QUIET, seed=0)
        whole = rle_decode(prop.masks[SLOT_WHOLE])
        inst = rle_decode(scene.instances[0])
        assert np.all(whole[inst])
        assert whole.sum() > inst.sum()

    def test_deterministic(self):
        scene = touching_pair()
        cfg = OracleConfig(channels=32)
        a = propose(scene, PixelPoint(x=30, y=30), cfg, seed=9)
        b = propose(scene, PixelPoint(x=30, y=30), cfg, seed=9)
        assert a == b
        c = propose(scene, PixelPoint(x=30, y=30), cfg, seed=10)
        assert a != c

    def test_out_of_bounds_prompt(self):
        scene = isolated_square()
        with pytest.raises(InvalidPrompt):
            propose(scene, PixelPoint(x=48, y=10), QUIET, seed=0)
        with pytest.raises(InvalidPrompt):
            propose(scene, PixelPoint(x=-1, y=10), QUIET, seed=0)


class TestBackgroundPrompt:
    def test_blobs_are_local_and_scored_plausible(self):
        scene = isolated_square()
        cfg = OracleConfig(whole_bias=0.0, score_noise=0.0, channels=16)
        prop = propose(scene, PixelPoint(x=5, y=5), cfg, seed=2)
        assert len(prop.masks) == N_SLOTS
        for mask, score in zip(prop.masks, prop.base_scores):
            assert 0 < mask_area(mask) < 800
            assert 0.3 <= score <= 0.9
            assert rle_decode(mask)[5, 5]

    def test_true_ious_are_zero(self):
        scene = isolated_square()
        prop = propose(scene, PixelPoint(x=5, y=5), QUIET, seed=2)
        assert np.all(true_slot_ious(scene, prop) == 0.0)

    def test_blobs_differ_across_slots(self):
        scene = isolated_square()
        prop = propose(scene, PixelPoint(x=40, y=8), QUIET, seed=4)
        assert len({m.runs for m in prop.masks}) > 1


class TestFlipRateInvariant:
    def test_biased_fixture_set_flips_at_least_half(self):
        cfg = OracleConfig(whole_bias=0.3, boundary_noise=2.5,
                           score_noise=0.02, token_noise=0.0, channels=16)
        flips = 0
        total = 0
        for k in range(20):
            scene = touching_pair(big=((20, 40 + k % 3), (18, 40)), small_w=5)
            prop = propose(scene, PixelPoint(x=28, y=30), cfg, seed=k)
            ious = true_slot_ious(scene, prop)
            total += 1
            if int(np.argmax(prop.base_scores)) != int(np.argmax(ious)):
                flips += 1
        assert flips / total >= 0.5


class TestSynthTokens:
    def test_empty_and_full_area_fraction(self):
        size = ImageSize(10, 10)
        empty = BinaryMask(size=size, runs=(100,))
        full = BinaryMask(size=size, runs=(0, 100))
        cfg = OracleConfig(token_noise=0.0, channels=16)
        t0 = synth_tokens(empty, PixelPoint(x=1, y=1), 0.5, 0, cfg, seed=0)
        t1 = synth_tokens(full, PixelPoint(x=1, y=1), 0.5, 0, cfg, seed=0)
        assert t0[0] == 0.0
        assert t1[0] == 1.0

    def test_hand_computed_statistics(self):
        size = ImageSize(10, 20)
        d = np.zeros((10, 20), dtype=bool)
        d[4:7, 8:11] = True  # 3x3 square, centroid (9, 5), boundary 8 px
        mask = from_dense(d)
        cfg = OracleConfig(token_noise=0.0, channels=16)
        tok = synth_tokens(mask, PixelPoint(x=7, y=5), 0.75, 2, cfg, seed=1)
        assert tok[0] == pytest.approx(9 / 200)
        assert tok[1] == pytest.approx(8 / 9)
        assert tok[2] == pytest.approx((9 - 7) / 20)
        assert tok[3] == pytest.approx(0.0)
        assert list(tok[4:8]) == [0.0, 0.0, 1.0, 0.0]
        assert tok[8] == 0.75
        assert tok[9] == 0.0  # prompt just left of the square
        assert np.all(tok[10:] == 0.0)

    def test_noise_fill_is_seeded(self):
        size = ImageSize(8, 8)
        mask = BinaryMask(size=size, runs=(0, 64))
        cfg = OracleConfig(token_noise=0.2, channels=32)
        a = synth_tokens(mask, PixelPoint(x=2, y=2), 0.5, 1, cfg, seed=7)
        b = synth_tokens(mask, PixelPoint(x=2, y=2), 0.5, 1, cfg, seed=7)
        c = synth_tokens(mask, PixelPoint(x=2, y=2), 0.5, 1, cfg, seed=8)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            OracleConfig(channels=4)
        with pytest.raises(ConfigError):
            OracleConfig(score_noise=-0.1)


class TestReplay:
    def test_record_then_replay_round_trip(self, tmp_path):
        scene = generate_scene(SceneConfig(size=ImageSize(64, 80),
                                           min_objects=3, max_objects=5),
                               seed=11)
        rec = RecordingProposer(OracleProposer(OracleConfig(channels=32)))
        prompts = [PixelPoint(x=10, y=10), PixelPoint(x=40, y=30)]
        live = [rec.propose(scene, p, seed=5) for p in prompts]
        rec.save(tmp_path / "props.json")
        replay = ReplayProposer(tmp_path / "props.json")
        for p, want in zip(prompts, live):
            assert replay.propose(scene, p, seed=5) == want

    def test_replay_missing_prompt(self, tmp_path):
        scene = isolated_square()
        rec = RecordingProposer(OracleProposer(OracleConfig(channels=16)))
        rec.propose(scene, PixelPoint(x=24, y=24), seed=0)
        rec.save(tmp_path / "props.json")
        replay = ReplayProposer(tmp_path / "props.json")
        with pytest.raises(DatasetError):
            replay.propose(scene, PixelPoint(x=1, y=1), seed=0)

    def test_make_proposer_dispatch(self, tmp_path):
        assert isinstance(make_proposer("oracle"), OracleProposer)
        with pytest.raises(ConfigError):
            make_proposer("replay")
        with pytest.raises(ConfigError):
            make_proposer("nonsense")
        (tmp_path / "empty.json").write_text("{}")
        assert isinstance(make_proposer("replay",
                                        replay_path=tmp_path / "empty.json"),
                          ReplayProposer)

    def test_corrupt_recording(self, tmp_path):
        (tmp_path / "bad.json").write_text("{oops")
        with pytest.raises(DatasetError):
            ReplayProposer(tmp_path / "bad.json")


class TestOnGeneratedScenes:
    def test_fg_prompts_cover_all_slots_with_sane_masks(self):
        scene = generate_scene(SceneConfig(size=ImageSize(96, 128)), seed=3)
        cfg = OracleConfig(channels=64)
        inst = rle_decode(scene.instances[0])
        ys, xs = np.nonzero(inst)
        p = PixelPoint(x=int(xs[len(xs) // 2]), y=int(ys[len(ys) // 2]))
        prop = propose(scene, p, cfg, seed=0)
        assert len(prop.masks) == N_SLOTS
        assert prop.mask_tokens.shape == (N_SLOTS, 64)
        assert prop.iou_token.shape == (64,)
        assert all(0.0 <= s <= 1.0 for s in prop.base_scores)
        assert all(mask_area(m) > 0 for m in prop.masks)
