"""Axis-aligned boxes, box sequences (tubes), and the IoU measures built on them.

Coordinates are continuous: a box covers the rectangle [x1, x2] x [y1, y2]
and its area is (x2 - x1) * (y2 - y1), with no +1 pixel convention.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .errors import ValidationError


@dataclass(frozen=True)
class Box:
    """A scored detection rectangle on one frame."""

    frame: int
    x1: float
    y1: float
    x2: float
    y2: float
    score: float = 1.0

    def __post_init__(self) -> None:
        if int(self.frame) != self.frame or self.frame < 0:
            raise ValidationError(f"frame index must be a non-negative integer, got {self.frame!r}")
        object.__setattr__(self, "frame", int(self.frame))
        for name in ("x1", "y1", "x2", "y2", "score"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ValidationError(f"degenerate corners: ({self.x1},{self.y1})-({self.x2},{self.y2})")
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"score must lie in [0,1], got {self.score}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))


@dataclass(frozen=True)
class Tube:
    """A time-ordered box sequence with exactly one box per covered frame."""

    boxes: tuple[Box, ...]

    def __post_init__(self) -> None:
        boxes = tuple(self.boxes)
        object.__setattr__(self, "boxes", boxes)
        if not boxes:
            raise ValidationError("a tube needs at least one box")
        for prev, cur in zip(boxes, boxes[1:]):
            if cur.frame != prev.frame + 1:
                raise ValidationError(
                    f"tube frames must be consecutive: {prev.frame} followed by {cur.frame}"
                )

    @property
    def start_frame(self) -> int:
        return self.boxes[0].frame

    @property
    def end_frame(self) -> int:
        return self.boxes[-1].frame

    @property
    def span(self) -> tuple[int, int]:
        return (self.start_frame, self.end_frame)

    def __len__(self) -> int:
        return len(self.boxes)

    def covers(self, frame: int) -> bool:
        return self.start_frame <= frame <= self.end_frame

    def box_at(self, frame: int) -> Box:
        if not self.covers(frame):
            raise KeyError(f"frame {frame} outside tube span {self.span}")
        return self.boxes[frame - self.start_frame]


def box_iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes; frame indices are ignored.

    Zero-area boxes have IoU 0 against everything, including themselves.
    """
    area_a = a.area
    area_b = b.area
    if area_a <= 0.0 or area_b <= 0.0:
        return 0.0
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (area_a + area_b - inter)


def tube_iou(a: Tube, b: Tube) -> float:
    """Mean per-frame box IoU over the union of the two frame spans.

    Frames covered by only one tube contribute 0, so temporally disjoint
    tubes score 0 even when their boxes coincide spatially.
    """
    lo = min(a.start_frame, b.start_frame)
    hi = max(a.end_frame, b.end_frame)
    union_frames = [f for f in range(lo, hi + 1) if a.covers(f) or b.covers(f)]
    total = 0.0
    for f in union_frames:
        if a.covers(f) and b.covers(f):
            total += box_iou(a.box_at(f), b.box_at(f))
    return total / len(union_frames)


def clamp_box(b: Box, width: float, height: float) -> Box:
    """Clip box coordinates to [0, width] x [0, height].

    A box fully outside the bounds collapses to a zero-area box at the
    nearest border.
    """
    if width <= 0 or height <= 0:
        raise ValidationError("clamp bounds must be positive")
    return Box(
        frame=b.frame,
        x1=min(max(b.x1, 0.0), width),
        y1=min(max(b.y1, 0.0), height),
        x2=min(max(b.x2, 0.0), width),
        y2=min(max(b.y2, 0.0), height),
        score=b.score,
    )


def full_span_tube(boxes: Iterable[Box]) -> Tube:
    """Build a tube after sorting boxes by frame index."""
    return Tube(tuple(sorted(boxes, key=lambda bx: bx.frame)))
