"""Single-target tracking by multi-scale normalized cross-correlation.

The matcher is the pluggable stand-in for a learned appearance-similarity
network: it scores a fixed template against candidate locations and is the
only appearance model the tracker uses. Any callable with the same signature
as :func:`match` can replace it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import TrackingError, ValidationError
from .geometry import Box
from .ingest import VideoFrames

_NORM_EPS = 1e-12


@dataclass(frozen=True)
class TrackerConfig:
    patch_resolution: int = 32
    search_radius_fraction: float = 0.5
    scale_set: tuple[float, ...] = (0.96, 1.0, 1.04)
    translation_stride: int = 1

    def __post_init__(self) -> None:
        if self.patch_resolution < 4:
            raise ValidationError("patch_resolution must be >= 4")
        if self.search_radius_fraction <= 0:
            raise ValidationError("search_radius_fraction must be positive")
        if 1.0 not in self.scale_set:
            raise ValidationError("scale_set must contain 1.0")
        if self.translation_stride < 1:
            raise ValidationError("translation_stride must be >= 1")
        object.__setattr__(self, "scale_set", tuple(sorted(self.scale_set)))


@dataclass(frozen=True)
class AppearanceTemplate:
    """Zero-mean, unit-norm grayscale patch cut from the seed box.

    ``degenerate`` marks an all-constant source patch, for which no
    informative template exists; its patch is all zeros.
    """

    patch: np.ndarray
    source_box: Box
    degenerate: bool = False


class TrackResult(NamedTuple):
    boxes: tuple[Box, ...]
    degenerate: bool


Matcher = Callable[[AppearanceTemplate, VideoFrames, int, Box, TrackerConfig], "tuple[Box, float]"]


def to_gray(frames: VideoFrames) -> np.ndarray:
    """Collapse channels to a (N, H, W) grayscale stack by equal-weight mean."""
    return np.asarray(frames.data, dtype=np.float64).mean(axis=1)


def _cell_centers(lo: float, hi: float, n: int) -> np.ndarray:
    step = (hi - lo) / n
    return lo + (np.arange(n) + 0.5) * step


def _bilinear_rows(image: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample image at out[..., j, i] = image(ys[..., j], xs[..., i]).

    ``ys``/``xs`` are continuous coordinates where pixel (r, c) covers
    [r, r+1) x [c, c+1); samples interpolate between pixel centers and
    replicate edges outside the image.
    """
    h, w = image.shape
    gx = np.clip(xs - 0.5, 0.0, w - 1.0)
    gy = np.clip(ys - 0.5, 0.0, h - 1.0)
    ix0 = np.minimum(np.floor(gx).astype(np.intp), max(w - 2, 0))
    iy0 = np.minimum(np.floor(gy).astype(np.intp), max(h - 2, 0))
    fx = gx - ix0
    fy = gy - iy0
    ix1 = np.minimum(ix0 + 1, w - 1)
    iy1 = np.minimum(iy0 + 1, h - 1)
    # broadcast (..., j, 1) y-indices against (..., 1, i) x-indices
    iy0e, iy1e, fye = iy0[..., :, None], iy1[..., :, None], fy[..., :, None]
    ix0e, ix1e, fxe = ix0[..., None, :], ix1[..., None, :], fx[..., None, :]
    top = (1.0 - fxe) * image[iy0e, ix0e] + fxe * image[iy0e, ix1e]
    bot = (1.0 - fxe) * image[iy1e, ix0e] + fxe * image[iy1e, ix1e]
    return (1.0 - fye) * top + fye * bot


def sample_patch(gray: np.ndarray, box: Box, resolution: int) -> np.ndarray:
    """Resample the box interior to a (resolution, resolution) patch."""
    xs = _cell_centers(box.x1, box.x2, resolution)
    ys = _cell_centers(box.y1, box.y2, resolution)
    return _bilinear_rows(gray, ys, xs)


def extract_template(frames: VideoFrames, b: Box, resolution: int = 32) -> AppearanceTemplate:
    """Cut, resample, and normalize the appearance template for a seed box."""
    from .geometry import clamp_box

    clamped = clamp_box(b, frames.width, frames.height)
    if clamped.area <= 0.0:
        raise ValidationError(f"cannot extract a template from a zero-area box: {b}")
    gray = to_gray(frames)[clamped.frame]
    patch = sample_patch(gray, clamped, resolution)
    patch = patch - patch.mean()
    norm = float(np.linalg.norm(patch))
    if norm < _NORM_EPS:
        return AppearanceTemplate(
            patch=np.zeros_like(patch), source_box=clamped, degenerate=True
        )
    return AppearanceTemplate(patch=patch / norm, source_box=clamped, degenerate=False)


def _ncc_scores(patches: np.ndarray, template: np.ndarray) -> np.ndarray:
    """NCC of each (R, R) patch in a (n, R, R) stack against the template."""
    r = patches.shape[-1]
    means = patches.mean(axis=(1, 2))
    dots = np.einsum("aij,ij->a", patches, template)
    sumsq = np.einsum("aij,aij->a", patches, patches)
    var = np.maximum(sumsq - r * r * means**2, 0.0)
    denom = np.sqrt(var)
    scores = np.where(denom > _NORM_EPS, dots / np.maximum(denom, _NORM_EPS), 0.0)
    return np.clip(scores, -1.0, 1.0)


def match(
    t: AppearanceTemplate,
    frames: VideoFrames,
    frame_idx: int,
    center_box: Box,
    cfg: TrackerConfig,
) -> tuple[Box, float]:
    """Exhaustive multi-scale NCC search around ``center_box``.

    Translations cover the integer grid within radius rho * diag(center_box)
    (Euclidean) at the configured stride; each scale keeps the center box
    aspect ratio. Ties go to the smallest translation magnitude, then the
    scale closest to 1.0, then (dy, dx, scale) order for full determinism.
    The returned box carries ``center_box.score`` so a tube inherits its
    seed's confidence.
    """
    if not 0 <= frame_idx < frames.num_frames:
        raise ValidationError(f"frame index {frame_idx} out of range")
    gray = to_gray(frames)[frame_idx]
    h, w = gray.shape
    cx, cy = center_box.center
    bw, bh = center_box.width, center_box.height
    radius = cfg.search_radius_fraction * math.hypot(bw, bh)
    r_int = int(math.floor(radius))
    if (
        cx + radius < 0
        or cx - radius > w
        or cy + radius < 0
        or cy - radius > h
    ):
        raise TrackingError(
            f"search window around ({cx:.1f},{cy:.1f}) lies fully outside the {w}x{h} frame"
        )

    offsets = np.arange(-r_int, r_int + 1, cfg.translation_stride, dtype=np.float64)
    dxg, dyg = np.meshgrid(offsets, offsets)  # dyg varies along rows
    keep = dxg**2 + dyg**2 <= radius**2 + 1e-9
    dxs = dxg[keep]
    dys = dyg[keep]
    res = cfg.patch_resolution

    chunk = max(1, 4_000_000 // (res * res))
    best: tuple | None = None
    for scale in cfg.scale_set:
        sw, sh = bw * scale, bh * scale
        base_x = _cell_centers(cx - sw / 2.0, cx + sw / 2.0, res)
        base_y = _cell_centers(cy - sh / 2.0, cy + sh / 2.0, res)
        scores = np.empty(len(dxs))
        for lo in range(0, len(dxs), chunk):
            hi = lo + chunk
            xs = base_x[None, :] + dxs[lo:hi, None]  # (n, R)
            ys = base_y[None, :] + dys[lo:hi, None]
            patches = _bilinear_rows(gray, ys, xs)
            scores[lo:hi] = _ncc_scores(patches, t.patch)
        d2 = dxs**2 + dys**2
        # lexsort: last key is primary
        order = np.lexsort((dxs, dys, d2, -scores))
        i = order[0]
        cand = (-scores[i], d2[i], abs(scale - 1.0), dys[i], dxs[i], scale, i)
        if best is None or cand < best:
            best = cand
            best_box = Box(
                frame=frame_idx,
                x1=cx + dxs[i] - sw / 2.0,
                y1=cy + dys[i] - sh / 2.0,
                x2=cx + dxs[i] + sw / 2.0,
                y2=cy + dys[i] + sh / 2.0,
                score=center_box.score,
            )
            best_score = float(scores[i])
    assert best is not None
    return best_box, best_score


def track(
    frames: VideoFrames,
    seed: Box,
    direction: str,
    cfg: TrackerConfig,
    matcher: Matcher | None = None,
) -> TrackResult:
    """Track the seed box to the video boundary in one direction.

    The template is fixed from the seed (no online update); each step
    searches around the previous box. The seed frame's entry is the seed box
    verbatim. Boxes come back in trajectory order (seed first). A degenerate
    seed template yields the seed replicated over all frames, flagged.
    """
    if direction not in ("forward", "backward"):
        raise ValidationError(f"direction must be 'forward' or 'backward', got {direction!r}")
    if not 0 <= seed.frame < frames.num_frames:
        raise ValidationError(f"seed frame {seed.frame} out of range")
    step = 1 if direction == "forward" else -1
    stop = frames.num_frames if direction == "forward" else -1
    frame_range = range(seed.frame + step, stop, step)

    template = extract_template(frames, seed, cfg.patch_resolution)
    if template.degenerate:
        boxes = [seed] + [
            Box(f, seed.x1, seed.y1, seed.x2, seed.y2, seed.score) for f in frame_range
        ]
        return TrackResult(boxes=tuple(boxes), degenerate=True)

    matcher = matcher or match
    boxes = [seed]
    current = seed
    for f in frame_range:
        current, _ = matcher(template, frames, f, current, cfg)
        boxes.append(current)
    return TrackResult(boxes=tuple(boxes), degenerate=False)
