"""Greedy actor-proposal generation: seed on the best detection, track it
into a full-span tube, filter overlapping detections, repeat.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import FormatError, ValidationError
from .geometry import Box, Tube, box_iou
from .ingest import (
    FORMAT_VERSION,
    DetectionSet,
    VideoFrames,
    _check_version,
    _read_json,
    _require,
    box_from_dict,
    box_to_dict,
)
from .tracking import Matcher, TrackerConfig, track


@dataclass(frozen=True)
class LinkingConfig:
    max_proposals: int = 20
    filter_threshold: float = 0.7

    def __post_init__(self) -> None:
        if self.max_proposals < 1:
            raise ValidationError("max_proposals must be >= 1")
        if not 0.0 < self.filter_threshold <= 1.0:
            raise ValidationError("filter_threshold must lie in (0, 1]")


@dataclass(frozen=True)
class ProposalSet:
    """Tubes in generation order (descending seed score) plus their seeds."""

    tubes: tuple[Tube, ...]
    seeds: tuple[Box, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "tubes", tuple(self.tubes))
        object.__setattr__(self, "seeds", tuple(self.seeds))
        if len(self.tubes) != len(self.seeds):
            raise ValidationError("one seed per tube required")

    def __len__(self) -> int:
        return len(self.tubes)


def select_top_detection(d: DetectionSet) -> Box:
    """Global argmax by score; ties by (frame, x1, y1, insertion index)."""
    if not d.detections:
        raise ValueError("detection set is empty")
    _, best = min(
        enumerate(d.detections), key=lambda kv: (-kv[1].score, kv[1].frame, kv[1].x1, kv[1].y1, kv[0])
    )
    return best


def filter_detections(d: DetectionSet, t: Tube, threshold: float) -> DetectionSet:
    """Drop detections whose IoU with the tube box at the same frame reaches
    the threshold (inclusive). The tube must cover every detection's frame.
    """
    kept = tuple(
        b for b in d.detections if box_iou(b, t.box_at(b.frame)) < threshold
    )
    return DetectionSet(video_id=d.video_id, num_frames=d.num_frames, detections=kept)


def generate_actor_proposals(
    d: DetectionSet,
    frames: VideoFrames,
    tracker_cfg: TrackerConfig,
    cfg: LinkingConfig,
    matcher: Matcher | None = None,
) -> ProposalSet:
    """Produce up to ``max_proposals`` full-span actor tubes from detections.

    Each iteration seeds the tracker with the highest-score remaining
    detection, tracks it forward and backward to both video boundaries, and
    removes every detection overlapping the new tube. An empty detection set
    yields an empty ProposalSet.
    """
    if d.num_frames != frames.num_frames:
        raise ValidationError(
            f"detections cover {d.num_frames} frames but video has {frames.num_frames}"
        )
    tubes: list[Tube] = []
    seeds: list[Box] = []
    remaining = d
    while remaining.detections and len(tubes) < cfg.max_proposals:
        seed = select_top_detection(remaining)
        fwd = track(frames, seed, "forward", tracker_cfg, matcher)
        bwd = track(frames, seed, "backward", tracker_cfg, matcher)
        # both sequences start with the seed verbatim
        boxes = tuple(reversed(bwd.boxes))[:-1] + fwd.boxes
        tube = Tube(boxes)
        assert tube.span == (0, frames.num_frames - 1)
        tubes.append(tube)
        seeds.append(seed)
        remaining = filter_detections(remaining, tube, cfg.filter_threshold)
    return ProposalSet(tubes=tuple(tubes), seeds=tuple(seeds))


# ---------------------------------------------------------------------------
# serialization (shared with the Viterbi baseline)
# ---------------------------------------------------------------------------


def save_proposals(path: Path | str, video_id: str, num_frames: int, proposals: ProposalSet) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "video_id": video_id,
        "num_frames": num_frames,
        "tubes": [
            {
                "seed": box_to_dict(seed),
                "boxes": [box_to_dict(b) for b in tube.boxes],
            }
            for tube, seed in zip(proposals.tubes, proposals.seeds)
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_proposals(path: Path | str) -> tuple[str, int, ProposalSet]:
    path = Path(path)
    doc = _read_json(path)
    _check_version(doc, str(path))
    video_id = str(_require(doc, "video_id", str(path)))
    num_frames = int(_require(doc, "num_frames", str(path)))
    tubes = []
    seeds = []
    for i, entry in enumerate(_require(doc, "tubes", str(path))):
        where = f"{path}: tubes[{i}]"
        seeds.append(box_from_dict(_require(entry, "seed", where), where))
        boxes = [box_from_dict(b, where) for b in _require(entry, "boxes", where)]
        try:
            tubes.append(Tube(tuple(boxes)))
        except ValidationError as exc:
            raise FormatError(f"{where}: {exc}") from exc
    return video_id, num_frames, ProposalSet(tubes=tuple(tubes), seeds=tuple(seeds))
