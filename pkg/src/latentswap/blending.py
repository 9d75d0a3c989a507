"""Inner-face mask handling and feature-pyramid aggregation."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from .errors import InvalidArgumentError, ShapeError

__all__ = ["downsample_mask", "aggregate_level", "aggregate_pyramid", "box_mask", "binarize_mask"]


def _as_mask4d(m):
    m = torch.as_tensor(m)
    if m.ndim == 2:
        m = m[None, None]
    elif m.ndim == 3:
        m = m[:, None]
    if m.ndim != 4 or m.shape[1] != 1:
        raise ShapeError(f"mask must be (H, W), (B, H, W) or (B, 1, H, W), got {tuple(m.shape)}")
    return m


def binarize_mask(pixels, threshold=128):
    """8-bit grayscale -> binary float mask (``pixel >= threshold`` is inside)."""
    return (np.asarray(pixels) >= threshold).astype(np.float32)


def box_mask(resolution, margin=0.25, dtype=torch.float32):
    """Centred square mask covering ``[margin, 1 - margin]`` of each side."""
    lo = int(round(resolution * margin))
    hi = resolution - lo
    m = torch.zeros(resolution, resolution, dtype=dtype)
    m[lo:hi, lo:hi] = 1
    return m


def downsample_mask(m, level_resolution, hard=False):
    """Area-average ``m`` down to ``level_resolution``.

    Each output cell is the exact mean of its non-overlapping block. With
    ``hard=True`` the result is thresholded at 0.5.
    Returns a ``(B, 1, r, r)`` tensor.
    """
    m = _as_mask4d(m)
    size = m.shape[-1]
    if m.shape[-2] != size:
        raise ShapeError("mask must be square")
    if level_resolution <= 0 or size % level_resolution:
        raise InvalidArgumentError(f"level resolution {level_resolution} does not divide mask size {size}")
    factor = size // level_resolution
    soft = m if factor == 1 else F.avg_pool2d(m, factor)
    if hard:
        soft = (soft >= 0.5).to(m.dtype)
    return soft


def aggregate_level(f_s, f_t, m):
    """``m * f_s + (1 - m) * f_t`` with the mask broadcast over channels.

    Where ``m`` is exactly 1 (0) the output equals ``f_s`` (``f_t``) bitwise.
    """
    if f_s.shape != f_t.shape:
        raise ShapeError(f"feature shapes differ: {tuple(f_s.shape)} vs {tuple(f_t.shape)}")
    m = _as_mask4d(m).to(f_s.dtype)
    if m.shape[-2:] != f_s.shape[-2:]:
        raise ShapeError(f"mask size {tuple(m.shape[-2:])} does not match features {tuple(f_s.shape[-2:])}")
    # torch.where keeps the binary limits exact; the clamp keeps rounding
    # inside the closed interval between the operands.
    blended = f_t + m * (f_s - f_t)
    blended = torch.maximum(torch.minimum(blended, torch.maximum(f_s, f_t)), torch.minimum(f_s, f_t))
    out = torch.where(m == 1, f_s, blended)
    return torch.where(m == 0, f_t, out)


def aggregate_pyramid(F_s, F_t, m, hard=False):
    """Blend two feature pyramids level by level under the inner-face mask."""
    if len(F_s) != len(F_t):
        raise ShapeError(f"pyramid level counts differ: {len(F_s)} vs {len(F_t)}")
    return [aggregate_level(fs, ft, downsample_mask(m, fs.shape[-1], hard=hard)) for fs, ft in zip(F_s, F_t)]
