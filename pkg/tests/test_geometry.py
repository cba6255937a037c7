import numpy as np
import pytest
from hypothesis import given, strategies as st

from trpkit.errors import BadRunLength, DimensionMismatch
from trpkit.geometry import (
    BinaryMask,
    Box,
    Rle,
    box_giou,
    box_iou,
    box_l1,
    mask_dice,
    mask_intersection_union,
    mask_iou,
    rle_decode,
    rle_encode,
)

from generators import random_box, random_mask

unit = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)


@st.composite
def boxes(draw):
    x0, x1 = sorted((draw(unit), draw(unit)))
    y0, y1 = sorted((draw(unit), draw(unit)))
    return Box(x0, y0, x1, y1)


class TestBox:
    def test_rejects_inverted(self):
        with pytest.raises(ValueError):
            Box(0.5, 0, 0.4, 1)
        with pytest.raises(ValueError):
            Box(0, 0, 1.5, 1)
        with pytest.raises(ValueError):
            Box.from_seq([0, 0, 1])

    def test_degenerate_allowed(self):
        assert Box(0.3, 0.3, 0.3, 0.3).area == 0

    def test_l1_hand_case(self):
        assert box_l1(Box(0, 0, 1, 1), Box(0, 0, 0.5, 1)) == 0.75

    def test_l1_identity(self):
        assert box_l1(Box(0.1, 0.2, 0.3, 0.4), Box(0.1, 0.2, 0.3, 0.4)) == 0

    def test_giou_identity(self):
        assert box_giou(Box(0.1, 0.2, 0.6, 0.9), Box(0.1, 0.2, 0.6, 0.9)) == 1

    def test_giou_adjacent_halves(self):
        assert box_giou(Box(0, 0, 0.5, 1), Box(0.5, 0, 1, 1)) == 0

    def test_giou_far_apart(self):
        g = box_giou(Box(0, 0, 0.1, 0.1), Box(0.9, 0.9, 1, 1))
        # enclosure 1, union 0.02
        assert g == pytest.approx(-0.98)

    def test_degenerate_giou(self):
        p = Box(0.3, 0.3, 0.3, 0.3)
        assert box_giou(p, p) == 1
        assert box_giou(p, Box(0.5, 0.5, 0.5, 0.5)) == -1

    def test_giou_equals_iou_when_enclosure_is_union(self):
        outer, inner = Box(0.1, 0.1, 0.9, 0.9), Box(0.2, 0.3, 0.5, 0.6)
        assert box_giou(outer, inner) == pytest.approx(box_iou(outer, inner))

    @given(boxes(), boxes())
    def test_properties(self, a, b):
        g, i = box_giou(a, b), box_iou(a, b)
        assert -1 <= g <= 1
        assert g <= i + 1e-12
        assert g == box_giou(b, a)
        assert box_l1(a, b) == pytest.approx(box_l1(b, a))

    def test_giou_direct_formula_on_samples(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            a, b = random_box(rng), random_box(rng)
            iw = max(0.0, min(a.x1, b.x1) - max(a.x0, b.x0))
            ih = max(0.0, min(a.y1, b.y1) - max(a.y0, b.y0))
            inter = iw * ih
            union = a.area + b.area - inter
            c = (max(a.x1, b.x1) - min(a.x0, b.x0)) * (max(a.y1, b.y1) - min(a.y0, b.y0))
            assert box_giou(a, b) == pytest.approx(inter / union - (c - union) / c, abs=1e-12)


def loop_counts(a, b):
    inter = union = sa = sb = 0
    for r in range(a.shape[0]):
        for c in range(a.shape[1]):
            x, y = bool(a[r, c]), bool(b[r, c])
            inter += x and y
            union += x or y
            sa += x
            sb += y
    return inter, union, sa, sb


class TestMask:
    def test_identical_and_disjoint(self):
        a = BinaryMask(np.eye(4, dtype=bool))
        b = BinaryMask(~np.eye(4, dtype=bool))
        assert mask_dice(a, a) == mask_iou(a, a) == 1
        assert mask_dice(a, b) == mask_iou(a, b) == 0

    def test_empty_pair(self):
        e = BinaryMask(np.zeros((3, 3), dtype=bool))
        assert mask_dice(e, e) == mask_iou(e, e) == 1

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            mask_iou(BinaryMask(np.zeros((2, 2), bool)), BinaryMask(np.zeros((2, 3), bool)))
        with pytest.raises(DimensionMismatch):
            mask_dice(BinaryMask(np.zeros((2, 2), bool)), BinaryMask(np.zeros((3, 2), bool)))

    def test_against_loop_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(300):
            a, b = random_mask(rng, 8, 8, rng.random()), random_mask(rng, 8, 8, rng.random())
            inter, union, sa, sb = loop_counts(a.data, b.data)
            assert mask_intersection_union(a, b) == (inter, union)
            assert mask_iou(a, b) == (inter / union if union else 1.0)
            assert mask_dice(a, b) == (2 * inter / (sa + sb) if sa + sb else 1.0)
            assert mask_iou(a, b) == mask_iou(b, a)


class TestRle:
    def test_all_zero(self):
        assert rle_encode(BinaryMask(np.zeros((2, 2), bool))).counts == (4,)

    def test_all_one(self):
        assert rle_encode(BinaryMask(np.ones((2, 2), bool))).counts == (0, 4)

    def test_column_major(self):
        m = np.array([[1, 0], [1, 0]], dtype=bool)
        assert rle_encode(BinaryMask(m)).counts == (0, 2, 2)

    def test_bad_run_length(self):
        with pytest.raises(BadRunLength):
            rle_decode(Rle((2, 2), [1, 2]))

    def test_json_roundtrip(self):
        r = rle_encode(BinaryMask(np.array([[0, 1, 1]], dtype=bool)))
        assert Rle.from_json(r.to_json()) == r

    def test_roundtrip_1000_random(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            h, w = int(rng.integers(1, 12)), int(rng.integers(1, 12))
            m = random_mask(rng, h, w, rng.random())
            r = rle_encode(m)
            assert sum(r.counts) == h * w
            assert all(c > 0 for c in r.counts[1:])
            out = rle_decode(r)
            assert out.data.dtype == bool and np.array_equal(out.data, m.data)
