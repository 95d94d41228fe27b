import math

import pytest
from hypothesis import given, strategies as st

from annotrack.geometry import (
    BoundingBox,
    Keyframe,
    blend_boxes,
    blend_weight,
    iou,
    linear_interpolate,
    search_window,
    template_window,
)


def grid_iou(a: BoundingBox, b: BoundingBox, cells_per_px: int = 10) -> float:
    """Independent IoU oracle: count unit cells of a fine integer grid."""
    xs = [a.x, a.x + a.w, b.x, b.x + b.w]
    ys = [a.y, a.y + a.h, b.y, b.y + b.h]
    x0, x1 = math.floor(min(xs) * cells_per_px), math.ceil(max(xs) * cells_per_px)
    y0, y1 = math.floor(min(ys) * cells_per_px), math.ceil(max(ys) * cells_per_px)
    inter = union = 0
    for cy in range(y0, y1):
        for cx in range(x0, x1):
            px, py = (cx + 0.5) / cells_per_px, (cy + 0.5) / cells_per_px
            in_a = a.x <= px <= a.x + a.w and a.y <= py <= a.y + a.h
            in_b = b.x <= px <= b.x + b.w and b.y <= py <= b.y + b.h
            if in_a and in_b:
                inter += 1
            if in_a or in_b:
                union += 1
    return inter / union


finite_boxes = st.builds(
    BoundingBox,
    x=st.floats(-50, 50),
    y=st.floats(-50, 50),
    w=st.floats(0.1, 60),
    h=st.floats(0.1, 60),
)


class TestBoundingBox:
    def test_rejects_non_positive_dims(self):
        with pytest.raises(ValueError):
            BoundingBox(0, 0, 0, 10)
        with pytest.raises(ValueError):
            BoundingBox(0, 0, 10, -1)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            BoundingBox(float("nan"), 0, 1, 1)
        with pytest.raises(ValueError):
            BoundingBox(0, float("inf"), 1, 1)

    def test_center_round_trip(self):
        b = BoundingBox.from_center(10.5, -3.0, 7.0, 2.0)
        assert (b.cx, b.cy, b.w, b.h) == (10.5, -3.0, 7.0, 2.0)


class TestIou:
    def test_identical(self):
        b = BoundingBox(0, 0, 10, 10)
        assert iou(b, b) == 1.0

    def test_disjoint(self):
        assert iou(BoundingBox(0, 0, 10, 10), BoundingBox(20, 20, 5, 5)) == 0.0

    def test_half_overlap_matches_grid_oracle(self):
        a, b = BoundingBox(0, 0, 10, 10), BoundingBox(5, 0, 10, 10)
        # intersection 50, union 150
        assert iou(a, b) == pytest.approx(1 / 3, rel=1e-12)
        assert grid_iou(a, b) == pytest.approx(1 / 3, rel=1e-3)

    def test_edge_touching_is_zero(self):
        assert iou(BoundingBox(0, 0, 10, 10), BoundingBox(10, 0, 10, 10)) == 0.0

    @given(a=finite_boxes, b=finite_boxes)
    def test_symmetric(self, a, b):
        assert iou(a, b) == iou(b, a)

    @given(a=finite_boxes, b=finite_boxes)
    def test_in_unit_interval(self, a, b):
        assert 0.0 <= iou(a, b) <= 1.0

    @given(b=finite_boxes)
    def test_self_iou_is_one(self, b):
        assert iou(b, b) == 1.0


class TestLinearInterpolate:
    def test_endpoints_exact(self):
        k1 = Keyframe(0, BoundingBox(1.25, 2.5, 3.75, 4.125))
        k2 = Keyframe(7, BoundingBox(9.5, -1.5, 2.25, 8.0))
        assert linear_interpolate(k1, k2, 0) == k1.box
        assert linear_interpolate(k1, k2, 7) == k2.box

    def test_midpoint(self):
        k1 = Keyframe(0, BoundingBox(0, 0, 10, 10))
        k2 = Keyframe(10, BoundingBox(20, 0, 30, 10))
        mid = linear_interpolate(k1, k2, 5)
        assert (mid.x, mid.y, mid.w, mid.h) == pytest.approx((10, 0, 20, 10), rel=1e-12)

    def test_constant_track(self):
        box = BoundingBox(3, 4, 5, 6)
        k1, k2 = Keyframe(2, box), Keyframe(9, box)
        for t in range(2, 10):
            got = linear_interpolate(k1, k2, t)
            assert (got.x, got.y, got.w, got.h) == pytest.approx((3, 4, 5, 6), rel=1e-12)

    def test_out_of_range(self):
        k1 = Keyframe(0, BoundingBox(0, 0, 1, 1))
        k2 = Keyframe(5, BoundingBox(1, 1, 1, 1))
        with pytest.raises(ValueError):
            linear_interpolate(k1, k2, 6)
        with pytest.raises(ValueError):
            linear_interpolate(k2, k1, 3)


class TestTemplateWindow:
    def test_square_100(self):
        win = template_window(BoundingBox(0, 0, 100, 100))
        assert win.side == pytest.approx(200, rel=1e-12)
        assert (win.center_x, win.center_y) == (50, 50)
        assert win.output_resolution == 127

    def test_zero_padding_hook(self):
        win = template_window(BoundingBox(0, 0, 127, 127), padding=0.0)
        assert win.side == pytest.approx(127, rel=1e-12)

    def test_rectangular(self):
        win = template_window(BoundingBox(10, 20, 40, 20))
        assert win.side == pytest.approx(math.sqrt(3500), rel=1e-12)
        assert (win.center_x, win.center_y) == (30, 30)

    @given(b=finite_boxes)
    def test_side_squared_equals_padded_area(self, b):
        win = template_window(b)
        p = (b.w + b.h) / 4
        assert win.side**2 == pytest.approx((b.w + 2 * p) * (b.h + 2 * p), rel=1e-9)


class TestSearchWindow:
    def test_factor_one_matches_template_geometry(self):
        b = BoundingBox(5, 6, 30, 40)
        t, s = template_window(b), search_window(b, 1.0)
        assert s.side == t.side
        assert (s.center_x, s.center_y) == (t.center_x, t.center_y)
        assert s.output_resolution == 255

    def test_factor_two(self):
        assert search_window(BoundingBox(0, 0, 100, 100), 2.0).side == pytest.approx(400, rel=1e-12)

    def test_pure_function(self):
        b = BoundingBox(1, 2, 3, 4)
        assert search_window(b, 1.5) == search_window(b, 1.5)

    def test_rejects_sub_unit_factor(self):
        with pytest.raises(ValueError):
            search_window(BoundingBox(0, 0, 1, 1), 0.5)


class TestBlendWeight:
    def test_at_keyframe(self):
        assert blend_weight(0, 10) == 1.0

    def test_at_cap(self):
        assert blend_weight(10, 10) == 0.0

    def test_beyond_cap(self):
        assert blend_weight(11, 10) == 0.0

    def test_halfway(self):
        assert blend_weight(5, 10) == pytest.approx(0.25, rel=1e-12)

    @given(cap=st.floats(0.5, 100), frac=st.floats(0, 2))
    def test_monotone_and_bounded(self, cap, frac):
        d = frac * cap
        w = blend_weight(d, cap)
        assert 0.0 <= w <= 1.0
        assert blend_weight(min(d + 0.1 * cap, 2 * cap), cap) <= w + 1e-12

    def test_continuous_at_cap(self):
        cap = 7.0
        assert blend_weight(cap, cap) == pytest.approx(0.0, abs=1e-15)
        assert blend_weight(cap + 1e-9, cap) == 0.0


class TestBlendBoxes:
    def test_weight_one_returns_geometric(self):
        g, v = BoundingBox(0, 0, 10, 10), BoundingBox(5, 5, 8, 8)
        assert blend_boxes(g, v, 1.0) == g

    def test_weight_zero_returns_visual(self):
        g, v = BoundingBox(0, 0, 10, 10), BoundingBox(5, 5, 8, 8)
        assert blend_boxes(g, v, 0.0) == v

    def test_midpoint_per_component(self):
        g, v = BoundingBox(0, 0, 10, 10), BoundingBox(10, 0, 20, 10)
        out = blend_boxes(g, v, 0.5)
        assert (out.x, out.y, out.w, out.h) == pytest.approx((5, 0, 15, 10), rel=1e-12)

    def test_rejects_out_of_range_weight(self):
        b = BoundingBox(0, 0, 1, 1)
        with pytest.raises(ValueError):
            blend_boxes(b, b, 1.5)
