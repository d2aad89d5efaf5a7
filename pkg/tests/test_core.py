import numpy as np
import pytest

from uoiskit.core import (
    BinaryMask,
    ImageSize,
    from_dense,
    mask_area,
    mask_centroid,
    mask_iou,
    rle_decode,
    rle_encode,
)
from uoiskit.errors import CorruptMask, EmptyMask, InvalidDimensions


def make_mask(rows):
    return from_dense(np.array(rows, dtype=bool))


class TestRleEncode:
    def test_all_zeros(self):
        m = rle_encode(np.zeros(4), ImageSize(2, 2))
        assert m.runs == (4,)

    def test_hand_enumerated_pattern(self):
        # 0,1,1,0 -> one zero, two ones, one zero
        m = rle_encode([0, 1, 1, 0], ImageSize(1, 4))
        assert m.runs == (1, 2, 1)

    def test_leading_one_gets_zero_run(self):
        m = rle_encode([1, 1, 0, 0], ImageSize(1, 4))
        assert m.runs == (0, 2, 2)

    def test_length_mismatch(self):
        with pytest.raises(InvalidDimensions):
            rle_encode([0, 1], ImageSize(2, 2))

    def test_round_trip_random_8x8(self):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            dense = rng.random((8, 8)) < rng.random()
            m = rle_encode(dense, ImageSize(8, 8))
            assert np.array_equal(rle_decode(m), dense)

    def test_round_trip_varied_shapes(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            h = int(rng.integers(1, 12))
            w = int(rng.integers(1, 12))
            dense = rng.random((h, w)) < 0.5
            assert np.array_equal(rle_decode(from_dense(dense)), dense)

    def test_canonical_runs(self):
        # no interior zero-length runs; a leading 0 only for masks starting with 1
        rng = np.random.default_rng(3)
        for _ in range(200):
            dense = rng.random(24) < 0.5
            runs = rle_encode(dense, ImageSize(4, 6)).runs
            assert all(r > 0 for r in runs[1:])
            assert sum(runs) == 24


class TestRleDecode:
    def test_all_zero_run(self):
        m = BinaryMask(ImageSize(2, 2), (4,))
        assert not rle_decode(m).any()

    def test_leading_zero_run_all_ones(self):
        m = BinaryMask(ImageSize(2, 2), (0, 4))
        assert rle_decode(m).all()

    def test_inverse_of_encode_example(self):
        m = BinaryMask(ImageSize(1, 4), (1, 2, 1))
        assert rle_decode(m).tolist() == [[False, True, True, False]]

    def test_bad_sum_raises(self):
        with pytest.raises(CorruptMask):
            rle_decode(BinaryMask(ImageSize(2, 2), (3,)))

    def test_negative_run_raises(self):
        with pytest.raises(CorruptMask):
            rle_decode(BinaryMask(ImageSize(2, 2), (5, -1)))


class TestMaskIou:
    def test_identical_nonempty(self):
        m = make_mask([[1, 1], [0, 0]])
        assert mask_iou(m, m) == 1.0

    def test_disjoint(self):
        a = make_mask([[1, 0], [0, 0]])
        b = make_mask([[0, 0], [0, 1]])
        assert mask_iou(a, b) == 0.0

    def test_half_contained(self):
        a = make_mask([[1, 1], [0, 0]])
        b = make_mask([[1, 1], [1, 1]])
        assert mask_iou(a, b) == 0.5

    def test_both_empty_convention(self):
        e = make_mask([[0, 0], [0, 0]])
        assert mask_iou(e, e) == 1.0

    def test_empty_vs_nonempty(self):
        e = make_mask([[0, 0], [0, 0]])
        a = make_mask([[1, 0], [0, 0]])
        assert mask_iou(e, a) == 0.0

    def test_size_mismatch(self):
        a = from_dense(np.zeros((2, 2), dtype=bool))
        b = from_dense(np.zeros((2, 3), dtype=bool))
        with pytest.raises(InvalidDimensions):
            mask_iou(a, b)

    def test_symmetry_bounds_and_equality(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            da = rng.random((6, 6)) < 0.4
            db = rng.random((6, 6)) < 0.4
            a, b = from_dense(da), from_dense(db)
            v = mask_iou(a, b)
            assert v == mask_iou(b, a)
            assert 0.0 <= v <= 1.0
            if da.any() or db.any():
                assert (v == 1.0) == np.array_equal(da, db)


class TestMaskCentroid:
    def test_single_pixel(self):
        dense = np.zeros((8, 8), dtype=bool)
        dense[5, 3] = True  # (x=3, y=5)
        c = mask_centroid(from_dense(dense))
        assert (c.x, c.y) == (3.0, 5.0)

    def test_two_by_two_block(self):
        dense = np.zeros((4, 4), dtype=bool)
        dense[0:2, 0:2] = True
        c = mask_centroid(from_dense(dense))
        assert (c.x, c.y) == (0.5, 0.5)

    def test_l_shape(self):
        dense = np.zeros((3, 3), dtype=bool)
        dense[0, 0] = dense[0, 1] = dense[1, 0] = True
        c = mask_centroid(from_dense(dense))
        assert c.x == pytest.approx(1 / 3)
        assert c.y == pytest.approx(1 / 3)

    def test_empty_raises(self):
        with pytest.raises(EmptyMask):
            mask_centroid(from_dense(np.zeros((2, 2), dtype=bool)))

    def test_rectangle_center(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            h, w = int(rng.integers(6, 20)), int(rng.integers(6, 20))
            y0, x0 = int(rng.integers(0, 3)), int(rng.integers(0, 3))
            y1, x1 = int(rng.integers(y0 + 1, h)), int(rng.integers(x0 + 1, w))
            dense = np.zeros((h, w), dtype=bool)
            dense[y0:y1, x0:x1] = True
            c = mask_centroid(from_dense(dense))
            assert c.x == pytest.approx((x0 + x1 - 1) / 2)
            assert c.y == pytest.approx((y0 + y1 - 1) / 2)


class TestMaskArea:
    def test_empty(self):
        assert mask_area(from_dense(np.zeros((3, 3), dtype=bool))) == 0

    def test_full(self):
        assert mask_area(from_dense(np.ones((3, 3), dtype=bool))) == 9

    def test_sum_of_one_runs(self):
        assert mask_area(BinaryMask(ImageSize(1, 4), (1, 2, 1))) == 2

    def test_inclusion_exclusion(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            da = rng.random((7, 5)) < 0.5
            db = rng.random((7, 5)) < 0.5
            lhs = mask_area(from_dense(da | db)) + mask_area(from_dense(da & db))
            rhs = mask_area(from_dense(da)) + mask_area(from_dense(db))
            assert lhs == rhs


def test_image_size_must_be_positive():
    with pytest.raises(InvalidDimensions):
        ImageSize(0, 4)
