"""File I/O: PNG images and masks, landmark JSON, datasets and frame directories.

Images are 8-bit RGB on disk and ``[-1, 1]`` tensors in memory; conversion is
``u / 127.5 - 1`` on load and ``floor((v + 1) * 127.5 + 0.5)`` clamped to
``[0, 255]`` on save. Masks are grayscale PNGs where ``pixel >= 128`` is the
inner face.

A training dataset is a directory of ``<stem>.png`` images with optional
sidecars ``<stem>.landmarks.json`` and ``<stem>.mask.png``. A video is a
directory of ``frame_%06d.png`` with optional ``landmarks_%06d.json`` and
``mask_%06d.png``.
"""

from __future__ import annotations

import json
import logging
import re
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .blending import binarize_mask, box_mask
from .errors import InvalidArgumentError, ShapeError
from .nets import LandmarkSet
from .pipeline import FaceSample
from .video import FrameSequence

logger = logging.getLogger(__name__)

__all__ = [
    "to_uint8",
    "from_uint8",
    "load_image",
    "save_image",
    "load_mask",
    "save_mask",
    "load_landmarks",
    "save_landmarks",
    "load_dataset",
    "save_dataset",
    "load_frame_dir",
    "save_frame_dir",
]


def to_uint8(x):
    """``(3, H, W)`` tensor in ``[-1, 1]`` -> ``(H, W, 3)`` uint8 array."""
    arr = x.detach().cpu().to(torch.float64).numpy()
    arr = np.floor((arr + 1.0) * 127.5 + 0.5)
    return np.clip(arr, 0, 255).astype(np.uint8).transpose(1, 2, 0)


def from_uint8(arr):
    arr = np.asarray(arr)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"expected an (H, W, 3) RGB array, got {arr.shape}")
    return torch.from_numpy(arr.transpose(2, 0, 1).astype(np.float32) / 127.5 - 1.0)


def load_image(path, resolution=None):
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"))
    if resolution is not None and arr.shape[:2] != (resolution, resolution):
        raise ShapeError(f"{path}: image is {arr.shape[1]}x{arr.shape[0]}, expected {resolution}x{resolution}")
    return from_uint8(arr)


def save_image(x, path):
    Image.fromarray(to_uint8(x), mode="RGB").save(path)


def load_mask(path, resolution=None):
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    if resolution is not None and arr.shape != (resolution, resolution):
        raise ShapeError(f"{path}: mask is {arr.shape[1]}x{arr.shape[0]}, expected {resolution}x{resolution}")
    return torch.from_numpy(binarize_mask(arr))


def save_mask(m, path):
    arr = (torch.as_tensor(m).detach().cpu().numpy() >= 0.5).astype(np.uint8) * 255
    Image.fromarray(arr, mode="L").save(path)


def load_landmarks(path):
    """JSON array of ``[x, y]`` pairs in normalised coordinates."""
    with open(path) as fh:
        data = json.load(fh)
    try:
        return LandmarkSet(np.asarray(data, dtype=np.float64))
    except (ValueError, TypeError) as exc:
        raise InvalidArgumentError(f"{path}: invalid landmark file: {exc}") from exc


def save_landmarks(landmarks, path):
    pts = landmarks.points if isinstance(landmarks, LandmarkSet) else np.asarray(landmarks)
    with open(path, "w") as fh:
        json.dump([[float(x), float(y)] for x, y in pts], fh)


def _estimate_landmarks(image, estimator):
    with torch.no_grad():
        coords = estimator(image.unsqueeze(0))[0]
    return coords.reshape(-1, 2).double().numpy()


def load_dataset(directory, resolution, landmark_estimator=None):
    """Load every ``<stem>.png`` in ``directory`` (sidecars excluded) as a :class:`FaceSample`.

    Missing landmark sidecars fall back to ``landmark_estimator``; missing
    masks fall back to a centred box.
    """
    directory = Path(directory)
    paths = sorted(p for p in directory.glob("*.png") if not p.name.endswith(".mask.png"))
    if not paths:
        raise InvalidArgumentError(f"no PNG images found in {directory}")
    samples = []
    for p in paths:
        stem = p.name[: -len(".png")]
        image = load_image(p, resolution)
        mask_path = directory / f"{stem}.mask.png"
        mask = load_mask(mask_path, resolution) if mask_path.exists() else box_mask(resolution)
        lm_path = directory / f"{stem}.landmarks.json"
        if lm_path.exists():
            lm = load_landmarks(lm_path).points
        elif landmark_estimator is not None:
            lm = _estimate_landmarks(image, landmark_estimator)
        else:
            raise InvalidArgumentError(f"{lm_path} missing and no landmark estimator available")
        samples.append(FaceSample(image, mask, lm, name=stem))
    return samples


def save_dataset(samples, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(samples):
        stem = s.name or f"face_{i:04d}"
        save_image(s.image, directory / f"{stem}.png")
        save_mask(s.mask, directory / f"{stem}.mask.png")
        save_landmarks(s.landmarks, directory / f"{stem}.landmarks.json")


_FRAME_RE = re.compile(r"^frame_(\d{6})\.png$")


def load_frame_dir(directory, resolution=None):
    directory = Path(directory)
    indices = sorted(int(m.group(1)) for p in directory.iterdir() if (m := _FRAME_RE.match(p.name)))
    if not indices:
        raise InvalidArgumentError(f"no frame_%06d.png files in {directory}")
    frames, landmarks, masks = [], [], []
    for i in indices:
        frames.append(load_image(directory / f"frame_{i:06d}.png", resolution))
        lm = directory / f"landmarks_{i:06d}.json"
        landmarks.append(load_landmarks(lm) if lm.exists() else None)
        mk = directory / f"mask_{i:06d}.png"
        masks.append(load_mask(mk, resolution) if mk.exists() else None)
    return FrameSequence(frames, landmarks, masks)


def save_frame_dir(sequence, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    frames = sequence.frames if isinstance(sequence, FrameSequence) else sequence
    for i, f in enumerate(frames):
        save_image(f, directory / f"frame_{i:06d}.png")
    if isinstance(sequence, FrameSequence):
        for i, lm in enumerate(sequence.landmarks or []):
            if lm is not None:
                save_landmarks(lm, directory / f"landmarks_{i:06d}.json")
        for i, m in enumerate(sequence.masks or []):
            if m is not None:
                save_mask(m, directory / f"mask_{i:06d}.png")
