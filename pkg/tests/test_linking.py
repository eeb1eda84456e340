import numpy as np
import pytest

from helpers import render_video

from actortubes.geometry import Box, box_iou
from actortubes.ingest import DetectionSet, VideoFrames
from actortubes.linking import (
    LinkingConfig,
    ProposalSet,
    filter_detections,
    generate_actor_proposals,
    load_proposals,
    save_proposals,
    select_top_detection,
)
from actortubes.tracking import TrackerConfig

TRACKER = TrackerConfig(patch_resolution=8)
LINKER = LinkingConfig()


def dets(num_frames, boxes, video_id="v"):
    return DetectionSet(video_id=video_id, num_frames=num_frames, detections=tuple(boxes))


class TestSelectTopDetection:
    def test_single_detection(self):
        b = Box(0, 0, 0, 5, 5, 0.4)
        assert select_top_detection(dets(1, [b])) == b

    def test_highest_score_wins(self):
        lo = Box(0, 0, 0, 5, 5, 0.3)
        hi = Box(0, 10, 10, 15, 15, 0.9)
        assert select_top_detection(dets(1, [lo, hi])) == hi

    def test_tie_broken_by_frame(self):
        late = Box(3, 0, 0, 5, 5, 0.8)
        early = Box(1, 0, 0, 5, 5, 0.8)
        assert select_top_detection(dets(4, [late, early])) == early

    def test_tie_broken_by_coordinates_then_insertion(self):
        a = Box(0, 2, 0, 5, 5, 0.8)
        b = Box(0, 1, 0, 5, 5, 0.8)
        assert select_top_detection(dets(1, [a, b])) == b
        # full tie keeps the first inserted
        c1 = Box(0, 1, 1, 5, 5, 0.8)
        c2 = Box(0, 1, 1, 5, 5, 0.8)
        picked = select_top_detection(dets(1, [c1, c2]))
        assert picked is dets(1, [c1, c2]).detections[0] or picked == c1

    def test_empty_set_raises(self):
        with pytest.raises(ValueError):
            select_top_detection(dets(1, []))


class TestFilterDetections:
    def _tube(self, num_frames, coords):
        from actortubes.geometry import Tube

        return Tube(tuple(Box(f, *coords) for f in range(num_frames)))

    def test_identical_removed(self):
        t = self._tube(2, (0, 0, 10, 10))
        d = dets(2, [Box(1, 0, 0, 10, 10, 0.5)])
        assert len(filter_detections(d, t, 0.7)) == 0

    def test_disjoint_kept(self):
        t = self._tube(2, (0, 0, 10, 10))
        d = dets(2, [Box(1, 30, 30, 40, 40, 0.5)])
        assert len(filter_detections(d, t, 0.7)) == 1

    def test_exact_threshold_removed(self):
        # IoU of (0,0,10,10) and (0,0,10,7) is exactly 0.7
        t = self._tube(1, (0, 0, 10, 10))
        probe = Box(0, 0, 0, 10, 7, 0.5)
        assert box_iou(probe, t.boxes[0]) == 0.7
        assert len(filter_detections(dets(1, [probe]), t, 0.7)) == 0

    def test_just_below_threshold_kept(self):
        t = self._tube(1, (0, 0, 10, 10))
        probe = Box(0, 0, 0, 10, 6.9, 0.5)
        assert len(filter_detections(dets(1, [probe]), t, 0.7)) == 1


class TestGenerateActorProposals:
    def test_empty_detections(self):
        frames = render_video([(20, 20, 16, 16)] * 3)
        out = generate_actor_proposals(dets(3, []), frames, TRACKER, LINKER)
        assert len(out) == 0

    def test_single_detection_static_video(self):
        frames = render_video([(20, 20, 16, 16)] * 4)
        seed = Box(1, 20, 20, 36, 36, 0.9)
        out = generate_actor_proposals(dets(4, [seed]), frames, TRACKER, LINKER)
        assert len(out) == 1
        tube = out.tubes[0]
        assert tube.span == (0, 3)
        assert out.seeds[0] == seed
        assert tube.box_at(1) == seed  # seed inserted verbatim
        for b in tube.boxes:
            assert box_iou(b, Box(b.frame, 20, 20, 36, 36)) >= 0.9

    def test_overlapping_pair_yields_single_tube(self):
        frames = render_video([(20, 20, 16, 16)] * 3)
        # mutual IoU 0.9 > 0.7: second seed filtered by the first tube
        a = Box(1, 20, 20, 36, 36, 0.9)
        b = Box(1, 20, 20, 36, 34.4, 0.8)
        assert box_iou(a, b) == pytest.approx(0.9)
        out = generate_actor_proposals(dets(3, [a, b]), frames, TRACKER, LINKER)
        assert len(out) == 1
        assert out.seeds[0] == a

    def test_disjoint_detections_yield_two_tubes(self):
        frames = render_video([(10, 10, 12, 12)] * 3)
        a = Box(0, 10, 10, 22, 22, 0.9)
        b = Box(2, 40, 40, 52, 52, 0.8)
        out = generate_actor_proposals(dets(3, [a, b]), frames, TRACKER, LINKER)
        assert len(out) == 2
        assert out.seeds == (a, b)  # descending seed score

    def test_termination_bound_fuzzed(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            n_frames = int(rng.integers(1, 4))
            frames = VideoFrames(data=rng.uniform(0, 1, size=(n_frames, 1, 16, 16)))
            boxes = []
            for _ in range(int(rng.integers(0, 10))):
                f = int(rng.integers(0, n_frames))
                x1, y1 = rng.uniform(0, 8, size=2)
                w, h = rng.uniform(2, 7, size=2)
                boxes.append(Box(f, x1, y1, x1 + w, y1 + h, float(rng.uniform(0, 1))))
            d = dets(n_frames, boxes)
            cfg = LinkingConfig(max_proposals=int(rng.integers(1, 6)))
            tracker = TrackerConfig(patch_resolution=4)
            out = generate_actor_proposals(d, frames, tracker, cfg)
            assert len(out) <= min(cfg.max_proposals, len(boxes) if boxes else 0)

    def test_tighter_threshold_never_more_proposals(self):
        rng = np.random.default_rng(33)
        frames = VideoFrames(data=rng.uniform(0, 1, size=(2, 1, 24, 24)))
        boxes = []
        for _ in range(8):
            f = int(rng.integers(0, 2))
            x1, y1 = rng.uniform(0, 12, size=2)
            w, h = rng.uniform(3, 10, size=2)
            boxes.append(Box(f, x1, y1, x1 + w, y1 + h, float(rng.uniform(0, 1))))
        d = dets(2, boxes)
        tracker = TrackerConfig(patch_resolution=4)
        counts = []
        for tau in (0.9, 0.7, 0.5, 0.3):
            cfg = LinkingConfig(max_proposals=10, filter_threshold=tau)
            counts.append(len(generate_actor_proposals(d, frames, tracker, cfg)))
        # tau shrinks left to right, so counts must be non-increasing
        assert counts == sorted(counts, reverse=True)

    def test_ordered_by_seed_score(self):
        rng = np.random.default_rng(15)
        frames = VideoFrames(data=rng.uniform(0, 1, size=(2, 1, 32, 32)))
        boxes = [
            Box(0, 2, 2, 8, 8, 0.5),
            Box(1, 20, 20, 28, 28, 0.9),
            Box(0, 12, 2, 18, 8, 0.7),
        ]
        out = generate_actor_proposals(
            dets(2, boxes), frames, TrackerConfig(patch_resolution=4), LINKER
        )
        scores = [s.score for s in out.seeds]
        assert scores == sorted(scores, reverse=True)


class TestProposalIO:
    def test_round_trip(self, tmp_path):
        frames = render_video([(20, 20, 16, 16)] * 3)
        seed = Box(1, 20, 20, 36, 36, 0.9)
        out = generate_actor_proposals(dets(3, [seed]), frames, TRACKER, LINKER)
        p1 = tmp_path / "p.json"
        p2 = tmp_path / "p2.json"
        save_proposals(p1, "v", 3, out)
        vid, n, loaded = load_proposals(p1)
        assert (vid, n) == ("v", 3)
        assert loaded == out
        save_proposals(p2, vid, n, loaded)
        assert p1.read_bytes() == p2.read_bytes()

    def test_seed_count_mismatch_rejected(self):
        from actortubes.errors import ValidationError
        from actortubes.geometry import Tube

        tube = Tube((Box(0, 0, 0, 1, 1),))
        with pytest.raises(ValidationError):
            ProposalSet(tubes=(tube,), seeds=())
