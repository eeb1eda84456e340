"""Shared synthetic-scene helpers for the test suite."""

import numpy as np

from actortubes.ingest import VideoFrames


def texture(u, v):
    """Smooth periodic texture over normalized object coordinates."""
    return 0.5 + 0.22 * np.sin(2 * np.pi * 3 * u) + 0.18 * np.cos(2 * np.pi * 2 * v)


def render_video(rects, size=64):
    """Frames with a textured rectangle per frame; rects[f] = (x0, y0, w, h).

    The texture is anchored to the rectangle, so translation and rescaling
    resample the same underlying pattern.
    """
    n = len(rects)
    frames = np.full((n, 3, size, size), 0.5)
    for f, (x0, y0, w, h) in enumerate(rects):
        px = np.arange(size) + 0.5
        py = np.arange(size) + 0.5
        u = (px - x0) / w
        v = (py - y0) / h
        inside_x = (u >= 0) & (u < 1)
        inside_y = (v >= 0) & (v < 1)
        tex = texture(u[None, :], v[:, None])
        mask = inside_y[:, None] & inside_x[None, :]
        for c in range(3):
            frames[f, c][mask] = tex[mask]
    return VideoFrames(data=np.clip(frames, 0, 1))
