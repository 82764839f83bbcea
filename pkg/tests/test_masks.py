from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import (
    bbox_iou,
    bitmap_bbox,
    bitmap_intersection_union,
    naive_rle_decode,
    naive_rle_encode,
)
from synth import random_bitmap, random_blob, rect_rle
from tripletseg.errors import MaskError
from tripletseg.masks import (
    BBox,
    RleMask,
    box_iou,
    mask_intersection_union,
    mask_iou,
    mask_to_bbox,
    rle_decode,
    rle_encode,
)


def test_encode_matches_naive_loop(rng):
    for _ in range(50):
        bitmap = random_bitmap(rng, int(rng.integers(1, 20)), int(rng.integers(1, 20)))
        mask = rle_encode(bitmap)
        assert list(mask.counts) == naive_rle_encode(bitmap)


def test_decode_matches_naive_loop(rng):
    for _ in range(50):
        bitmap = random_bitmap(rng, int(rng.integers(1, 20)), int(rng.integers(1, 20)))
        mask = rle_encode(bitmap)
        expected = naive_rle_decode(mask.height, mask.width, list(mask.counts))
        assert np.array_equal(rle_decode(mask), expected)


def test_round_trip_identity(rng):
    for _ in range(100):
        bitmap = random_bitmap(rng, int(rng.integers(1, 40)), int(rng.integers(1, 40)))
        assert np.array_equal(rle_decode(rle_encode(bitmap)), bitmap)


@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_round_trip_identity_property(h, w, seed):
    bitmap = np.random.default_rng(seed).random((h, w)) < 0.5
    assert np.array_equal(rle_decode(rle_encode(bitmap)), bitmap)


def test_canonical_form_examples():
    # all background
    m = RleMask(height=2, width=2, counts=(4,))
    assert m.area == 0
    # starts with foreground: leading zero
    m = RleMask(height=2, width=2, counts=(0, 1, 3))
    assert m.area == 1
    assert rle_decode(m)[0, 0]


@pytest.mark.parametrize(
    "counts,message",
    [
        ((2, 0, 2), "zero count at index"),
        ((3, 1, 0), "trailing zero"),
        ((3,), "counts sum"),
        ((2, -1, 3), "negative"),
        ((), "empty counts"),
    ],
)
def test_invalid_counts_rejected(counts, message):
    with pytest.raises(MaskError, match=message):
        RleMask(height=2, width=2, counts=counts)


def test_from_json_dict_validation():
    ok = RleMask.from_json_dict({"size": [2, 3], "counts": [6]})
    assert (ok.height, ok.width) == (2, 3)
    for bad in (
        None,
        {"size": [2], "counts": [4]},
        {"size": [2, 2]},
        {"counts": [4]},
        {"size": [2, 2], "counts": "4"},
    ):
        with pytest.raises(MaskError):
            RleMask.from_json_dict(bad)


def test_iou_exact_against_bitmap_oracle(rng):
    for _ in range(200):
        h = int(rng.integers(1, 24))
        w = int(rng.integers(1, 24))
        a_bitmap = random_bitmap(rng, h, w)
        b_bitmap = random_blob(rng, h, w)
        a, b = rle_encode(a_bitmap), rle_encode(b_bitmap)
        inter, union = mask_intersection_union(a, b)
        assert (inter, union) == bitmap_intersection_union(a_bitmap, b_bitmap)
        assert mask_iou(a, b) == inter / union


def test_iou_empty_cases():
    empty = RleMask(height=2, width=2, counts=(4,))
    full = RleMask(height=2, width=2, counts=(0, 4))
    assert mask_iou(empty, full) == 0.0
    assert mask_iou(full, empty) == 0.0
    with pytest.raises(MaskError, match="undefined"):
        mask_iou(empty, empty)


def test_iou_size_mismatch():
    a = RleMask(height=2, width=2, counts=(0, 4))
    b = RleMask(height=2, width=3, counts=(0, 6))
    with pytest.raises(MaskError, match="size mismatch"):
        mask_iou(a, b)


def test_identical_masks_iou_one(rng):
    for _ in range(20):
        bitmap = random_blob(rng, 16, 16)
        m = rle_encode(bitmap)
        assert mask_iou(m, m) == 1.0


def test_mask_to_bbox_matches_bitmap(rng):
    for _ in range(100):
        h = int(rng.integers(2, 24))
        w = int(rng.integers(2, 24))
        bitmap = random_blob(rng, h, w)
        box = mask_to_bbox(rle_encode(bitmap))
        assert (box.x, box.y, box.w, box.h) == bitmap_bbox(bitmap)


def test_mask_to_bbox_single_pixel():
    bitmap = np.zeros((5, 7), dtype=bool)
    bitmap[3, 2] = True
    box = mask_to_bbox(rle_encode(bitmap))
    assert (box.x, box.y, box.w, box.h) == (2, 3, 1, 1)


def test_mask_to_bbox_empty_rejected():
    with pytest.raises(MaskError, match="empty"):
        mask_to_bbox(RleMask(height=3, width=3, counts=(9,)))


def test_bbox_validation():
    with pytest.raises(MaskError):
        BBox(x=0, y=0, w=0, h=1)
    with pytest.raises(MaskError):
        BBox(x=-1, y=0, w=1, h=1)


def test_box_iou_hand_cases():
    a = BBox(x=0, y=0, w=2, h=2)
    b = BBox(x=1, y=1, w=2, h=2)
    assert box_iou(a, b) == pytest.approx(1 / 7)
    assert box_iou(a, a) == 1.0
    c = BBox(x=10, y=10, w=2, h=2)
    assert box_iou(a, c) == 0.0


def test_box_iou_matches_oracle(rng):
    for _ in range(100):
        vals = rng.integers(0, 10, size=4)
        a = BBox(int(vals[0]), int(vals[1]), int(rng.integers(1, 6)), int(rng.integers(1, 6)))
        b = BBox(int(vals[2]), int(vals[3]), int(rng.integers(1, 6)), int(rng.integers(1, 6)))
        assert box_iou(a, b) == bbox_iou(
            (a.x, a.y, a.w, a.h), (b.x, b.y, b.w, b.h)
        )


def test_rect_rle_helper_matches_dense(rng):
    # the synthetic rectangle builder must agree with encode of a dense rect
    for _ in range(50):
        height = int(rng.integers(2, 20))
        width = int(rng.integers(2, 20))
        h = int(rng.integers(1, height + 1))
        w = int(rng.integers(1, width + 1))
        y0 = int(rng.integers(0, height - h + 1))
        x0 = int(rng.integers(0, width - w + 1))
        bitmap = np.zeros((height, width), dtype=bool)
        bitmap[y0:y0 + h, x0:x0 + w] = True
        assert rect_rle(height, width, y0, x0, h, w) == rle_encode(bitmap)
