"""Dynamic-programming box linking: the traditional baseline that picks one
detection per frame to maximize unary scores plus pairwise IoU consistency.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ValidationError
from .geometry import Box, Tube, box_iou
from .ingest import DetectionSet
from .linking import ProposalSet


@dataclass(frozen=True)
class ViterbiConfig:
    pairwise_weight: float = 1.0
    num_tubes: int = 20

    def __post_init__(self) -> None:
        if self.pairwise_weight < 0:
            raise ValidationError("pairwise_weight must be non-negative")
        if self.num_tubes < 1:
            raise ValidationError("num_tubes must be >= 1")


def _select_path(d: DetectionSet, lam: float) -> list[tuple[int, Box]]:
    """Exact DP over the frames that contain detections.

    Maximizes sum(score) + lam * sum(IoU between consecutive picks). Ties are
    resolved toward the lowest box insertion index per frame, scanning from
    the first detection-bearing frame (suffix DP with forward pointers, so
    the returned path is the lexicographically smallest optimum).

    Returns (flat detection index, box) pairs in frame order.
    """
    per_frame: list[list[tuple[int, Box]]] = [[] for _ in range(d.num_frames)]
    for idx, b in enumerate(d.detections):
        per_frame[b.frame].append((idx, b))
    frames = [f for f in range(d.num_frames) if per_frame[f]]
    if not frames:
        raise ValueError("no detections to link")

    # suffix[t][i]: best objective of a path starting with box i at frames[t]
    n_steps = len(frames)
    suffix: list[list[float]] = [[0.0] * len(per_frame[f]) for f in frames]
    nxt: list[list[int]] = [[-1] * len(per_frame[f]) for f in frames]
    for t in range(n_steps - 1, -1, -1):
        cur = per_frame[frames[t]]
        for i, (_, box) in enumerate(cur):
            if t == n_steps - 1:
                suffix[t][i] = box.score
                continue
            best_j = -1
            best_val = -float("inf")
            for j, (_, nxt_box) in enumerate(per_frame[frames[t + 1]]):
                val = lam * box_iou(box, nxt_box) + suffix[t + 1][j]
                if val > best_val:
                    best_val = val
                    best_j = j
            suffix[t][i] = box.score + best_val
            nxt[t][i] = best_j

    start = max(range(len(suffix[0])), key=lambda i: (suffix[0][i], -i))
    path = []
    i = start
    for t in range(n_steps):
        path.append(per_frame[frames[t]][i])
        i = nxt[t][i]
    return path


def _interpolate(path: list[Box], num_frames: int) -> Tube:
    """Fill frames without a selected box by linear interpolation of the four
    coordinates (and score) between neighbors; replicate at the ends.
    """
    by_frame = {b.frame: b for b in path}
    sel_frames = sorted(by_frame)
    boxes = []
    for f in range(num_frames):
        if f in by_frame:
            boxes.append(by_frame[f])
            continue
        if f < sel_frames[0]:
            src = by_frame[sel_frames[0]]
            boxes.append(Box(f, src.x1, src.y1, src.x2, src.y2, src.score))
            continue
        if f > sel_frames[-1]:
            src = by_frame[sel_frames[-1]]
            boxes.append(Box(f, src.x1, src.y1, src.x2, src.y2, src.score))
            continue
        lo = max(g for g in sel_frames if g < f)
        hi = min(g for g in sel_frames if g > f)
        a, b = by_frame[lo], by_frame[hi]
        w = (f - lo) / (hi - lo)
        boxes.append(
            Box(
                f,
                a.x1 + w * (b.x1 - a.x1),
                a.y1 + w * (b.y1 - a.y1),
                a.x2 + w * (b.x2 - a.x2),
                a.y2 + w * (b.y2 - a.y2),
                a.score + w * (b.score - a.score),
            )
        )
    return Tube(tuple(boxes))


def viterbi_link(d: DetectionSet, cfg: ViterbiConfig) -> Tube:
    """Optimal single tube through the detections, expanded to full span."""
    path = _select_path(d, cfg.pairwise_weight)
    return _interpolate([b for _, b in path], d.num_frames)


def extract_k_tubes(d: DetectionSet, cfg: ViterbiConfig) -> ProposalSet:
    """Repeat the DP up to ``num_tubes`` times, removing each selected tube's
    boxes from the detection pool; stops early once the pool is exhausted.

    Each tube's recorded seed is its highest-score selected detection.
    """
    tubes: list[Tube] = []
    seeds: list[Box] = []
    remaining = d
    for _ in range(cfg.num_tubes):
        if not remaining.detections:
            break
        path = _select_path(remaining, cfg.pairwise_weight)
        selected = [b for _, b in path]
        tubes.append(_interpolate(selected, d.num_frames))
        seeds.append(max(selected, key=lambda b: (b.score, -b.frame)))
        taken = {idx for idx, _ in path}
        remaining = DetectionSet(
            video_id=remaining.video_id,
            num_frames=remaining.num_frames,
            detections=tuple(b for i, b in enumerate(remaining.detections) if i not in taken),
        )
    return ProposalSet(tubes=tuple(tubes), seeds=tuple(seeds))
