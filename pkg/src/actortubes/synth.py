"""Deterministic synthetic video benchmarks: textured rectangular actors on
noise backgrounds, exact ground-truth tubes, and noisy detections with
configurable dropout and distractors.

Everything is derived from a single RNG seed, so regenerating a suite is
bit-exact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ValidationError
from .geometry import Box, Tube
from .ingest import (
    DetectionSet,
    FeatureTensor,
    GroundTruth,
    GroundTruthInstance,
    Manifest,
    ManifestEntry,
    VideoFrames,
    save_detections,
    save_features,
    save_frames,
    save_ground_truth,
    save_manifest,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthConfig:
    video_id: str = "synth-000"
    num_frames: int = 20
    width: int = 64
    height: int = 64
    actor_size: tuple[float, float] = (16.0, 16.0)
    waypoints: tuple[tuple[float, float], ...] = ((24.0, 32.0), (40.0, 32.0))
    deformation: tuple[float, ...] | None = None  # aspect multiplier per frame
    dropout: float = 0.0
    dropout_window: tuple[int, int] | None = None  # [start, end) frames; None = everywhere
    noise_sigma: float = 0.0
    distractor_rate: float = 0.0  # expected static distractor objects per video
    distractor_score: tuple[float, float] = (0.2, 0.6)
    actor_score: tuple[float, float] = (0.75, 0.95)
    actor_color: tuple[float, float, float] = (0.72, 0.48, 0.4)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_frames < 1 or self.width < 8 or self.height < 8:
            raise ValidationError("num_frames must be >= 1 and frame size >= 8x8")
        if not 0.0 <= self.dropout <= 1.0:
            raise ValidationError("dropout must lie in [0, 1]")
        if self.noise_sigma < 0 or self.distractor_rate < 0:
            raise ValidationError("noise_sigma and distractor_rate must be non-negative")
        if self.deformation is not None and len(self.deformation) != self.num_frames:
            raise ValidationError("deformation schedule must cover every frame")
        if not self.waypoints:
            raise ValidationError("at least one waypoint required")


class SynthVideo(NamedTuple):
    video_id: str
    frames: VideoFrames
    tube: Tube
    detections: DetectionSet
    config: SynthConfig


def _path_centers(cfg: SynthConfig) -> list[tuple[float, float]]:
    pts = np.asarray(cfg.waypoints, dtype=np.float64)
    if cfg.num_frames == 1 or len(pts) == 1:
        return [tuple(pts[0])] * cfg.num_frames
    centers = []
    for f in range(cfg.num_frames):
        s = f / (cfg.num_frames - 1) * (len(pts) - 1)
        seg = min(int(np.floor(s)), len(pts) - 2)
        t = s - seg
        centers.append(tuple(pts[seg] * (1 - t) + pts[seg + 1] * t))
    return centers


def _checker(h: int, w: int, base_h: float, base_w: float, cell: int, contrast: float) -> np.ndarray:
    """Checker pattern anchored to the actor's base size, so that pure
    translation preserves the texture exactly and deformation stretches it."""
    vs = np.floor(np.arange(h) * (base_h / max(h, 1)) / cell).astype(int)
    us = np.floor(np.arange(w) * (base_w / max(w, 1)) / cell).astype(int)
    sign = ((vs[:, None] + us[None, :]) % 2) * 2.0 - 1.0
    return contrast * sign


def _actor_rect(cfg: SynthConfig, centers, f: int, warned: list[bool]) -> tuple[int, int, int, int]:
    mult = 1.0 if cfg.deformation is None else cfg.deformation[f]
    w = cfg.actor_size[0] * mult
    h = cfg.actor_size[1] / mult
    cx, cy = centers[f]
    iw = max(2, int(round(w)))
    ih = max(2, int(round(h)))
    iw = min(iw, cfg.width)
    ih = min(ih, cfg.height)
    x0 = int(round(cx - w / 2.0))
    y0 = int(round(cy - h / 2.0))
    x0c = min(max(x0, 0), cfg.width - iw)
    y0c = min(max(y0, 0), cfg.height - ih)
    if (x0c, y0c) != (x0, y0) and not warned[0]:
        warned[0] = True
        logger.warning("%s: actor leaves the frame at frame %d; clamped", cfg.video_id, f)
    return x0c, y0c, iw, ih


def _noisy_box(rng: np.random.Generator, frame: int, rect, sigma: float, score: float, cfg) -> Box:
    x0, y0, w, h = rect
    coords = np.array([x0, y0, x0 + w, y0 + h], dtype=np.float64)
    if sigma > 0:
        coords = coords + rng.normal(0.0, sigma, size=4)
    x1, x2 = sorted((coords[0], coords[2]))
    y1, y2 = sorted((coords[1], coords[3]))
    x1 = min(max(x1, 0.0), cfg.width - 1.0)
    y1 = min(max(y1, 0.0), cfg.height - 1.0)
    x2 = min(max(x2, x1 + 1.0), float(cfg.width))
    y2 = min(max(y2, y1 + 1.0), float(cfg.height))
    return Box(frame, x1, y1, x2, y2, float(np.clip(score, 0.0, 1.0)))


def generate(cfg: SynthConfig) -> SynthVideo:
    """Render one synthetic video with its exact ground-truth tube and noisy
    detections. Fully deterministic per seed."""
    rng = np.random.default_rng(cfg.seed)
    h, w, n = cfg.height, cfg.width, cfg.num_frames
    centers = _path_centers(cfg)

    background = np.clip(0.5 + 0.05 * rng.standard_normal((h, w)), 0.35, 0.65)

    n_distractors = int(rng.poisson(cfg.distractor_rate))
    distractors = []
    for d in range(n_distractors):
        dw = int(rng.integers(8, 14))
        dh = int(rng.integers(8, 14))
        dx = int(rng.integers(0, max(w - dw, 1)))
        dy = int(rng.integers(0, max(h - dh, 1)))
        shade = 0.3 if d % 2 == 0 else 0.68
        base_score = float(rng.uniform(*cfg.distractor_score))
        distractors.append((dx, dy, dw, dh, shade, base_score))

    frames = np.empty((n, 3, h, w), dtype=np.float64)
    gt_boxes = []
    warned = [False]
    for f in range(n):
        canvas = np.repeat(background[None, :, :], 3, axis=0).copy()
        for dx, dy, dw, dh, shade, _ in distractors:
            tex = shade + _checker(dh, dw, dh, dw, 2, 0.1)
            canvas[:, dy : dy + dh, dx : dx + dw] = np.clip(tex, 0.0, 1.0)[None, :, :]
        x0, y0, aw, ah = _actor_rect(cfg, centers, f, warned)
        tex = _checker(ah, aw, cfg.actor_size[1], cfg.actor_size[0], 4, 0.18)
        for c in range(3):
            canvas[c, y0 : y0 + ah, x0 : x0 + aw] = np.clip(cfg.actor_color[c] + tex, 0.0, 1.0)
        frames[f] = canvas
        gt_boxes.append(Box(f, float(x0), float(y0), float(x0 + aw), float(y0 + ah)))

    detections = []
    for f in range(n):
        in_window = cfg.dropout_window is None or (
            cfg.dropout_window[0] <= f < cfg.dropout_window[1]
        )
        drop_p = cfg.dropout if in_window else 0.0
        dropped = bool(rng.random() < drop_p)
        score = float(rng.uniform(*cfg.actor_score))
        b = gt_boxes[f]
        box = _noisy_box(rng, f, (b.x1, b.y1, b.width, b.height), cfg.noise_sigma, score, cfg)
        if not dropped:
            detections.append(box)
        for dx, dy, dw, dh, _, base_score in distractors:
            score = float(np.clip(base_score + rng.uniform(-0.02, 0.02), 0.0, 1.0))
            detections.append(
                _noisy_box(rng, f, (dx, dy, dw, dh), cfg.noise_sigma * 0.5, score, cfg)
            )

    return SynthVideo(
        video_id=cfg.video_id,
        frames=VideoFrames(data=frames),
        tube=Tube(tuple(gt_boxes)),
        detections=DetectionSet(
            video_id=cfg.video_id, num_frames=n, detections=tuple(detections)
        ),
        config=cfg,
    )


def _deformation_pulse(num_frames: int, start: int, end: int, peak: float) -> tuple[float, ...]:
    """Aspect multipliers ramping 1 -> peak -> 1 over [start, end)."""
    sched = np.ones(num_frames)
    span = max(end - start, 1)
    for i, f in enumerate(range(start, min(end, num_frames))):
        t = i / max(span - 1, 1)
        sched[f] = 1.0 + (peak - 1.0) * np.sin(np.pi * t)
    return tuple(float(v) for v in sched)


def deformation_benchmark(n_videos: int, seed: int = 0) -> list[SynthVideo]:
    """Videos whose actor undergoes a mid-sequence aspect-ratio deformation
    with detection dropout concentrated around it — the regime where
    score-plus-overlap DP linking breaks while appearance tracking holds.

    Motion direction/speed and distractor scores vary per video; detections
    inside the deformation window are dropped with probability 0.75, i.e. an
    expected 30% of all frames lose their actor detection.
    """
    if n_videos < 1:
        raise ValidationError("n_videos must be >= 1")
    master = np.random.default_rng(seed)
    num_frames = 20
    size = 64.0
    window = (7, 15)
    videos = []
    for i in range(n_videos):
        angle = master.uniform(0.0, 2.0 * np.pi)
        speed = master.uniform(1.0, 1.8)
        total = speed * (num_frames - 1)
        dx, dy = total * np.cos(angle), total * np.sin(angle)
        margin = 15.0
        cx = np.clip(size / 2 - dx / 2, margin, size - margin)
        cy = np.clip(size / 2 - dy / 2, margin, size - margin)
        ex = np.clip(cx + dx, margin, size - margin)
        ey = np.clip(cy + dy, margin, size - margin)
        distractor_hi = master.uniform(0.45, 0.72)
        video_seed = int(master.integers(0, 2**31 - 1))
        cfg = SynthConfig(
            video_id=f"deform-{i:03d}",
            num_frames=num_frames,
            width=64,
            height=64,
            actor_size=(16.0, 16.0),
            waypoints=((float(cx), float(cy)), (float(ex), float(ey))),
            deformation=_deformation_pulse(num_frames, 8, 14, 1.35),
            dropout=0.75,
            dropout_window=window,
            noise_sigma=0.8,
            distractor_rate=2.5,
            distractor_score=(0.35, float(distractor_hi)),
            actor_score=(0.78, 0.95),
            seed=video_seed,
        )
        videos.append(generate(cfg))
    return videos


_CLASS_COLORS = (
    (0.82, 0.36, 0.36),
    (0.36, 0.82, 0.36),
    (0.36, 0.36, 0.82),
    (0.8, 0.8, 0.3),
    (0.3, 0.8, 0.8),
    (0.8, 0.3, 0.8),
)


def make_classification_suite(
    n_per_class: int,
    num_classes: int = 3,
    seed: int = 0,
    num_frames: int = 24,
    frame_size: int = 48,
    id_prefix: str = "clip",
) -> list[tuple[SynthVideo, int]]:
    """Class-colored moving actors: the actor's color encodes the label, so
    identity features make the classes linearly separable."""
    if num_classes > len(_CLASS_COLORS):
        raise ValidationError(f"at most {len(_CLASS_COLORS)} classes supported")
    master = np.random.default_rng(seed)
    out = []
    for c in range(num_classes):
        for i in range(n_per_class):
            angle = master.uniform(0.0, 2.0 * np.pi)
            speed = master.uniform(0.6, 1.1)
            total = speed * (num_frames - 1)
            dx, dy = total * np.cos(angle), total * np.sin(angle)
            margin = 10.0
            cx = np.clip(frame_size / 2 - dx / 2, margin, frame_size - margin)
            cy = np.clip(frame_size / 2 - dy / 2, margin, frame_size - margin)
            ex = np.clip(cx + dx, margin, frame_size - margin)
            ey = np.clip(cy + dy, margin, frame_size - margin)
            cfg = SynthConfig(
                video_id=f"{id_prefix}-c{c}-{i:03d}",
                num_frames=num_frames,
                width=frame_size,
                height=frame_size,
                actor_size=(13.0, 13.0),
                waypoints=((float(cx), float(cy)), (float(ex), float(ey))),
                dropout=0.1,
                noise_sigma=0.5,
                distractor_rate=1.0,
                distractor_score=(0.2, 0.5),
                actor_score=(0.75, 0.95),
                actor_color=_CLASS_COLORS[c],
                seed=int(master.integers(0, 2**31 - 1)),
            )
            out.append((generate(cfg), c))
    return out


def frames_as_features(frames: VideoFrames) -> FeatureTensor:
    """Identity encoder: expose pixel frames as an (N, C, W, H) feature map."""
    return FeatureTensor(
        data=np.ascontiguousarray(frames.data.transpose(0, 1, 3, 2)),
        spatial_scale=(1.0, 1.0),
    )


def write_suite(
    out_dir: Path | str,
    labeled_videos: Sequence[tuple[SynthVideo, int]],
    class_names: Sequence[str],
    split: str,
) -> Path:
    """Write one split (frames, features, detections, ground truth, manifest)
    in the ingest formats; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    classes = {i: name for i, name in enumerate(class_names)}
    gt_videos = {}
    entries = []
    for video, label in labeled_videos:
        vid = video.video_id
        det_path = out / f"{vid}.detections.json"
        frames_path = out / f"{vid}.frames.tensor"
        features_path = out / f"{vid}.features.tensor"
        save_detections(det_path, video.detections)
        save_frames(frames_path, video.frames)
        save_features(features_path, frames_as_features(video.frames))
        gt_videos[vid] = (GroundTruthInstance(class_id=label, tube=video.tube),)
        entries.append(
            ManifestEntry(
                video_id=vid,
                label=label,
                detections=det_path,
                frames=frames_path,
                features=features_path,
            )
        )
    gt_path = out / "ground_truth.json"
    save_ground_truth(gt_path, GroundTruth(classes=classes, videos=gt_videos))
    entries = [replace(e, ground_truth=gt_path) for e in entries]
    manifest_path = out / "manifest.json"
    save_manifest(manifest_path, Manifest(split=split, entries=tuple(entries)))
    return manifest_path
