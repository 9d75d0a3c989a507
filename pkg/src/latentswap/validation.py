"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np
import torch

from .errors import ShapeError
from .nets import LandmarkSet

__all__ = ["check_image", "check_image_batch", "check_mask", "check_landmarks"]


def check_image(x, resolution, name="image"):
    """Coerce to a float32 ``(3, R, R)`` tensor in ``[-1, 1]``.

    Accepts tensors or arrays in CHW layout with values in ``[-1, 1]``, or
    ``(R, R, 3)`` uint8 arrays, which are rescaled.
    """
    if isinstance(x, np.ndarray) and x.dtype == np.uint8:
        if x.ndim != 3 or x.shape[2] != 3:
            raise ShapeError(f"{name}: uint8 images must be (H, W, 3), got {x.shape}")
        x = torch.from_numpy(x.transpose(2, 0, 1).astype(np.float32) / 127.5 - 1.0)
    x = torch.as_tensor(x, dtype=torch.float32)
    if x.shape != (3, resolution, resolution):
        raise ShapeError(f"{name}: expected shape (3, {resolution}, {resolution}), got {tuple(x.shape)}")
    if not torch.isfinite(x).all():
        raise ValueError(f"{name}: contains non-finite values")
    if x.min() < -1 - 1e-6 or x.max() > 1 + 1e-6:
        raise ValueError(f"{name}: values must lie in [-1, 1]")
    return x


def check_image_batch(xs, resolution, name="images"):
    if isinstance(xs, torch.Tensor) and xs.ndim == 4:
        return torch.stack([check_image(x, resolution, name) for x in xs])
    return torch.stack([check_image(x, resolution, f"{name}[{i}]") for i, x in enumerate(xs)])


def check_mask(m, resolution, name="mask"):
    m = torch.as_tensor(np.asarray(m) if not isinstance(m, torch.Tensor) else m, dtype=torch.float32)
    if m.shape != (resolution, resolution):
        raise ShapeError(f"{name}: expected shape ({resolution}, {resolution}), got {tuple(m.shape)}")
    if not ((m == 0) | (m == 1)).all():
        raise ValueError(f"{name}: face masks must be binary")
    return m


def check_landmarks(l, num_landmarks=None, name="landmarks"):
    pts = l.points if isinstance(l, LandmarkSet) else np.asarray(l, dtype=np.float64)
    lm = LandmarkSet(pts)
    if num_landmarks is not None and len(lm) != num_landmarks:
        raise ShapeError(f"{name}: expected {num_landmarks} points, got {len(lm)}")
    return lm.points
