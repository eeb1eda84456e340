import itertools

import numpy as np
import pytest

from actortubes.geometry import Box, box_iou
from actortubes.ingest import DetectionSet
from actortubes.viterbi import ViterbiConfig, extract_k_tubes, viterbi_link


def brute_force_best_path(per_frame, lam):
    """Oracle: enumerate every path in lexicographic order; keep the first
    one attaining the maximum objective (strict improvement to replace)."""
    best_path = None
    best_value = -float("inf")
    for choice in itertools.product(*[range(len(fr)) for fr in per_frame]):
        value = sum(per_frame[t][i].score for t, i in enumerate(choice))
        for t in range(len(choice) - 1):
            value += lam * box_iou(per_frame[t][choice[t]], per_frame[t + 1][choice[t + 1]])
        if value > best_value:
            best_value = value
            best_path = choice
    return best_path, best_value


def path_objective(boxes, lam):
    value = sum(b.score for b in boxes)
    for a, b in zip(boxes, boxes[1:]):
        value += lam * box_iou(a, b)
    return value


def random_instance(rng, max_frames=6, max_boxes=4, empty_frames=False):
    n_frames = int(rng.integers(1, max_frames + 1))
    boxes = []
    for f in range(n_frames):
        lo = 0 if empty_frames else 1
        for _ in range(int(rng.integers(lo, max_boxes + 1))):
            x1, y1 = rng.uniform(0, 15, size=2)
            w, h = rng.uniform(1, 10, size=2)
            boxes.append(Box(f, x1, y1, x1 + w, y1 + h, float(rng.uniform(0, 1))))
    return DetectionSet(video_id="v", num_frames=n_frames, detections=tuple(boxes))


class TestViterbiLink:
    def test_single_box_per_frame(self):
        boxes = [Box(f, f, 0, f + 5, 5, 0.5) for f in range(4)]
        d = DetectionSet("v", 4, tuple(boxes))
        tube = viterbi_link(d, ViterbiConfig())
        assert list(tube.boxes) == boxes

    def test_dp_beats_greedy(self):
        # greedy per-frame argmax picks the two disjoint 0.6 boxes (total 1.2);
        # the DP takes the overlapping 0.5 pair (1.0 + 1.0 IoU = 2.0)
        a0 = Box(0, 0, 0, 10, 10, 0.6)
        b0 = Box(0, 30, 30, 40, 40, 0.5)
        a1 = Box(1, 50, 50, 60, 60, 0.6)
        b1 = Box(1, 30, 30, 40, 40, 0.5)
        d = DetectionSet("v", 2, (a0, b0, a1, b1))
        tube = viterbi_link(d, ViterbiConfig(pairwise_weight=1.0))
        assert list(tube.boxes) == [b0, b1]

    def test_lambda_zero_is_per_frame_argmax(self):
        rng = np.random.default_rng(10)
        d = random_instance(rng)
        tube = viterbi_link(d, ViterbiConfig(pairwise_weight=0.0))
        per_frame = d.per_frame()
        for f, frame_boxes in enumerate(per_frame):
            if frame_boxes:
                assert tube.box_at(f).score == max(b.score for b in frame_boxes)

    def test_no_detections_raises(self):
        d = DetectionSet("v", 3, ())
        with pytest.raises(ValueError):
            viterbi_link(d, ViterbiConfig())

    def test_empty_frames_interpolated(self):
        a = Box(0, 0, 0, 10, 10, 0.9)
        b = Box(3, 6, 0, 16, 10, 0.9)
        d = DetectionSet("v", 6, (a, b))
        tube = viterbi_link(d, ViterbiConfig())
        assert tube.span == (0, 5)
        assert tube.box_at(1).x1 == pytest.approx(2.0)
        assert tube.box_at(2).x1 == pytest.approx(4.0)
        # endpoints replicated beyond the last detection
        assert tube.box_at(4).x1 == tube.box_at(3).x1
        assert tube.box_at(5).x1 == tube.box_at(3).x1

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(17)
        cfg = ViterbiConfig(pairwise_weight=1.0)
        for _ in range(200):
            d = random_instance(rng)
            per_frame = [fr for fr in d.per_frame() if fr]
            oracle_path, oracle_value = brute_force_best_path(per_frame, cfg.pairwise_weight)
            tube = viterbi_link(d, cfg)
            picked = [tube.box_at(fr[0].frame) for fr in per_frame]
            assert path_objective(picked, cfg.pairwise_weight) == pytest.approx(
                oracle_value, abs=1e-12
            )
            assert picked == [per_frame[t][i] for t, i in enumerate(oracle_path)]

    def test_adding_a_box_never_decreases_objective(self):
        rng = np.random.default_rng(23)
        cfg = ViterbiConfig()
        for _ in range(50):
            d = random_instance(rng, max_frames=4, max_boxes=3)
            per_frame = [fr for fr in d.per_frame() if fr]
            _, before = brute_force_best_path(per_frame, cfg.pairwise_weight)
            f = int(rng.integers(0, d.num_frames))
            x1, y1 = rng.uniform(0, 15, size=2)
            extra = Box(f, x1, y1, x1 + 5, y1 + 5, float(rng.uniform(0, 1)))
            d2 = DetectionSet("v", d.num_frames, d.detections + (extra,))
            tube = viterbi_link(d2, cfg)
            sel_frames = sorted({b.frame for b in d2.detections})
            picked = [tube.box_at(fr) for fr in sel_frames]
            assert path_objective(picked, cfg.pairwise_weight) >= before - 1e-12


class TestExtractKTubes:
    def test_k_one_equals_single_link(self):
        rng = np.random.default_rng(31)
        d = random_instance(rng)
        single = viterbi_link(d, ViterbiConfig())
        out = extract_k_tubes(d, ViterbiConfig(num_tubes=1))
        assert len(out) == 1
        assert out.tubes[0] == single

    def test_two_disjoint_tracks_recovered(self):
        track_a = [Box(f, 0, 0, 10, 10, 0.9) for f in range(3)]
        track_b = [Box(f, 30, 30, 40, 40, 0.8) for f in range(3)]
        d = DetectionSet("v", 3, tuple(track_a + track_b))
        out = extract_k_tubes(d, ViterbiConfig(num_tubes=2))
        assert len(out) == 2
        assert list(out.tubes[0].boxes) == track_a
        assert list(out.tubes[1].boxes) == track_b

    def test_early_stop_when_exhausted(self):
        track_a = [Box(f, 0, 0, 10, 10, 0.9) for f in range(3)]
        d = DetectionSet("v", 3, tuple(track_a))
        out = extract_k_tubes(d, ViterbiConfig(num_tubes=5))
        assert len(out) == 1

    def test_seed_is_highest_score_selected_box(self):
        track = [Box(0, 0, 0, 10, 10, 0.4), Box(1, 0, 0, 10, 10, 0.95)]
        d = DetectionSet("v", 2, tuple(track))
        out = extract_k_tubes(d, ViterbiConfig(num_tubes=1))
        assert out.seeds[0] == track[1]
