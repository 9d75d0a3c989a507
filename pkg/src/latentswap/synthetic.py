"""Procedural toy faces for tests, demos and smoke training.

Each face is a coloured ellipse with eyes and a mouth on a smooth
background. Landmarks follow the 68-point layout loosely (jaw contour,
brows, eyes, nose, mouth) and the mask is the filled inner-face ellipse.
"""

from __future__ import annotations

import numpy as np
import torch

from .pipeline import FaceSample

__all__ = ["synthetic_face", "synthetic_faces", "translate_image"]


def _landmarks(cx, cy, rx, ry, tilt, mouth_open):
    pts = []
    # jaw: 17
    for t in np.linspace(np.pi * 0.05, np.pi * 0.95, 17):
        pts.append((cx - rx * np.cos(t), cy + ry * np.sin(t) * 0.9))
    # brows: 5 + 5
    for side in (-1, 1):
        for t in np.linspace(-1, 1, 5):
            pts.append((cx + side * rx * 0.45 + t * rx * 0.18, cy - ry * 0.38 + tilt * side * 0.02))
    # nose: 9
    for t in np.linspace(0, 1, 4):
        pts.append((cx, cy - ry * 0.15 + t * ry * 0.3))
    for t in np.linspace(-1, 1, 5):
        pts.append((cx + t * rx * 0.15, cy + ry * 0.2))
    # eyes: 6 + 6
    for side in (-1, 1):
        ex, ey = cx + side * rx * 0.42, cy - ry * 0.18
        for t in np.linspace(0, 2 * np.pi, 6, endpoint=False):
            pts.append((ex + rx * 0.14 * np.cos(t), ey + ry * 0.06 * np.sin(t)))
    # mouth: 20
    my = cy + ry * 0.5
    for t in np.linspace(0, 2 * np.pi, 12, endpoint=False):
        pts.append((cx + rx * 0.35 * np.cos(t), my + ry * (0.08 + mouth_open) * np.sin(t)))
    for t in np.linspace(0, 2 * np.pi, 8, endpoint=False):
        pts.append((cx + rx * 0.22 * np.cos(t), my + ry * mouth_open * 0.8 * np.sin(t)))
    return np.clip(np.asarray(pts), 0.0, 1.0)


def synthetic_face(resolution, rng, shift=(0, 0)):
    """One random face as a :class:`FaceSample`; ``shift`` moves it by whole pixels."""
    r = resolution
    cx = 0.5 + rng.uniform(-0.05, 0.05) + shift[0] / r
    cy = 0.5 + rng.uniform(-0.05, 0.05) + shift[1] / r
    rx, ry = rng.uniform(0.22, 0.3), rng.uniform(0.28, 0.36)
    tilt = rng.uniform(-1, 1)
    mouth_open = rng.uniform(0.0, 0.06)
    skin = rng.uniform(0.2, 0.9, size=3)
    bg_a, bg_b = rng.uniform(-0.8, 0.8, size=3), rng.uniform(-0.8, 0.8, size=3)

    v, u = np.mgrid[0:r, 0:r] / (r - 1)
    img = bg_a[:, None, None] * (1 - u) + bg_b[:, None, None] * u
    img = img + 0.1 * np.sin(6 * np.pi * v)[None]
    face = ((u - cx) / rx) ** 2 + ((v - cy) / ry) ** 2 <= 1.0
    shade = 0.15 * (u - cx) / rx
    for c in range(3):
        img[c][face] = (skin[c] * 2 - 1 + shade[face])
    for side in (-1, 1):
        ex, ey = cx + side * rx * 0.42, cy - ry * 0.18
        eye = ((u - ex) / (rx * 0.14)) ** 2 + ((v - ey) / (ry * 0.06)) ** 2 <= 1.0
        img[:, eye] = -0.9
    my = cy + ry * 0.5
    mouth = ((u - cx) / (rx * 0.35)) ** 2 + ((v - my) / (ry * (0.08 + mouth_open))) ** 2 <= 1.0
    img[0][mouth], img[1][mouth], img[2][mouth] = 0.6, -0.6, -0.5
    img = np.clip(img, -1, 1).astype(np.float32)
    inner = ((u - cx) / (rx * 0.85)) ** 2 + ((v - cy) / (ry * 0.85)) ** 2 <= 1.0
    lm = _landmarks(cx, cy, rx, ry, tilt, mouth_open)
    return FaceSample(torch.from_numpy(img), torch.from_numpy(inner.astype(np.float32)), lm)


def synthetic_faces(n, resolution=64, seed=0):
    rng = np.random.default_rng(seed)
    faces = [synthetic_face(resolution, rng) for _ in range(n)]
    for i, f in enumerate(faces):
        f.name = f"face_{i:04d}"
    return faces


def translate_image(x, dx, dy):
    """Shift ``(C, H, W)`` content by whole pixels, repeating edge values."""
    c, h, w = x.shape
    ys = (torch.arange(h) - dy).clamp(0, h - 1)
    xs = (torch.arange(w) - dx).clamp(0, w - 1)
    return x[:, ys][:, :, xs]
