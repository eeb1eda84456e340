import numpy as np
import pytest

from actortubes.errors import ValidationError
from actortubes.geometry import Box, Tube, box_iou, clamp_box, tube_iou


def raster_iou(a: Box, b: Box) -> float:
    """Independent oracle: count unit pixel cells inside each integer box."""
    x_lo = int(min(a.x1, b.x1))
    x_hi = int(max(a.x2, b.x2))
    y_lo = int(min(a.y1, b.y1))
    y_hi = int(max(a.y2, b.y2))
    inter = union = 0
    for x in range(x_lo, x_hi):
        for y in range(y_lo, y_hi):
            in_a = a.x1 <= x < a.x2 and a.y1 <= y < a.y2
            in_b = b.x1 <= x < b.x2 and b.y1 <= y < b.y2
            inter += in_a and in_b
            union += in_a or in_b
    return inter / union if union else 0.0


def make_box(frame, x1, y1, x2, y2, score=1.0):
    return Box(frame=frame, x1=x1, y1=y1, x2=x2, y2=y2, score=score)


class TestBoxInvariants:
    def test_rejects_flipped_corners(self):
        with pytest.raises(ValidationError):
            make_box(0, 5, 0, 1, 10)

    def test_rejects_out_of_range_score(self):
        with pytest.raises(ValidationError):
            make_box(0, 0, 0, 1, 1, score=1.5)

    def test_rejects_negative_frame(self):
        with pytest.raises(ValidationError):
            make_box(-1, 0, 0, 1, 1)


class TestBoxIou:
    def test_identity(self):
        a = make_box(0, 0, 0, 10, 10)
        assert box_iou(a, a) == 1.0

    def test_disjoint(self):
        assert box_iou(make_box(0, 0, 0, 10, 10), make_box(0, 20, 20, 30, 30)) == 0.0

    def test_one_third_overlap(self):
        # frozen from the rasterized counting oracle
        a = make_box(0, 0, 0, 10, 10)
        b = make_box(0, 5, 0, 15, 10)
        assert raster_iou(a, b) == pytest.approx(1.0 / 3.0)
        assert box_iou(a, b) == pytest.approx(1.0 / 3.0)

    def test_zero_area_boxes(self):
        z = make_box(0, 5, 5, 5, 5)
        assert box_iou(z, z) == 0.0
        assert box_iou(z, make_box(0, 0, 0, 10, 10)) == 0.0

    def test_symmetry_randomized(self):
        rng = np.random.default_rng(7)
        for _ in range(10_000):
            c = rng.uniform(0, 50, size=8)
            a = make_box(0, min(c[0], c[1]), min(c[2], c[3]), max(c[0], c[1]), max(c[2], c[3]))
            b = make_box(0, min(c[4], c[5]), min(c[6], c[7]), max(c[4], c[5]), max(c[6], c[7]))
            assert box_iou(a, b) == box_iou(b, a)
            assert 0.0 <= box_iou(a, b) <= 1.0

    def test_self_iou_is_one_for_nonzero_area(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            x1, y1 = rng.uniform(0, 40, size=2)
            w, h = rng.uniform(0.5, 30, size=2)
            a = make_box(0, x1, y1, x1 + w, y1 + h)
            assert box_iou(a, a) == 1.0

    def test_matches_raster_oracle_on_integer_boxes(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            xs = np.sort(rng.integers(0, 24, size=2))
            ys = np.sort(rng.integers(0, 24, size=2))
            xs2 = np.sort(rng.integers(0, 24, size=2))
            ys2 = np.sort(rng.integers(0, 24, size=2))
            if xs[0] == xs[1] or ys[0] == ys[1] or xs2[0] == xs2[1] or ys2[0] == ys2[1]:
                continue
            a = make_box(0, xs[0], ys[0], xs[1], ys[1])
            b = make_box(0, xs2[0], ys2[0], xs2[1], ys2[1])
            area = min(a.area, b.area)
            assert abs(box_iou(a, b) - raster_iou(a, b)) <= 2.0 / area


class TestTube:
    def test_rejects_gap(self):
        with pytest.raises(ValidationError):
            Tube((make_box(0, 0, 0, 1, 1), make_box(2, 0, 0, 1, 1)))

    def test_rejects_empty(self):
        with pytest.raises(ValidationError):
            Tube(())

    def test_span_and_lookup(self):
        t = Tube(tuple(make_box(f, f, 0, f + 2, 2) for f in range(3, 7)))
        assert t.span == (3, 6)
        assert len(t) == 4
        assert t.box_at(5).x1 == 5


class TestTubeIou:
    def _tube(self, frames, coords):
        return Tube(tuple(make_box(f, *coords) for f in frames))

    def test_identity(self):
        t = self._tube(range(5), (0, 0, 10, 10))
        assert tube_iou(t, t) == 1.0

    def test_temporally_disjoint(self):
        a = self._tube(range(0, 3), (0, 0, 10, 10))
        b = self._tube(range(5, 8), (0, 0, 10, 10))
        assert tube_iou(a, b) == 0.0

    def test_one_frame_shared(self):
        # union span {0,1,2}; only frame 1 overlaps, with identical boxes
        a = self._tube((0, 1), (0, 0, 10, 10))
        b = self._tube((1, 2), (0, 0, 10, 10))
        assert tube_iou(a, b) == pytest.approx(1.0 / 3.0)
        assert tube_iou(a, b) == tube_iou(b, a)

    def test_monotone_in_temporal_overlap(self):
        base = self._tube(range(10), (0, 0, 10, 10))
        previous = 1.1
        for shift in range(0, 10):
            other = self._tube(range(shift, shift + 10), (0, 0, 10, 10))
            value = tube_iou(base, other)
            assert value <= previous
            previous = value


class TestClampBox:
    def test_clips_negative_corner(self):
        c = clamp_box(make_box(0, -5, -5, 5, 5), 100, 100)
        assert (c.x1, c.y1, c.x2, c.y2) == (0, 0, 5, 5)

    def test_identity_inside_bounds(self):
        b = make_box(0, 10, 20, 30, 40, score=0.5)
        assert clamp_box(b, 100, 100) == b

    def test_clips_far_corner(self):
        c = clamp_box(make_box(0, 90, 90, 120, 120), 100, 100)
        assert (c.x1, c.y1, c.x2, c.y2) == (90, 90, 100, 100)

    def test_fully_outside_collapses_to_border(self):
        c = clamp_box(make_box(0, 150, 150, 160, 160), 100, 100)
        assert (c.x1, c.y1, c.x2, c.y2) == (100, 100, 100, 100)
        assert c.area == 0.0
