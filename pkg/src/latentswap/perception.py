"""Pluggable auxiliary networks: identity, landmarks, perceptual features, flow, pose, expression.

The toy providers are small convolutional stacks with fixed seeded weights
that are never trained. They honour the interface contracts (determinism,
differentiability, output ranges) so the pipeline runs hermetically. Real
pre-trained models can be registered under new names with
:func:`register_provider`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InvalidConfigurationError, ShapeError

__all__ = [
    "ToyIdentityEmbedder",
    "ToyLandmarkEstimator",
    "ToyPerceptualExtractor",
    "toy_identity_embed",
    "toy_landmark_estimate",
    "toy_perceptual_features",
    "toy_flow_estimate",
    "analytic_translation_flow",
    "toy_pose_features",
    "toy_expression_features",
    "soft_argmax",
    "ProviderSet",
    "register_provider",
    "build_providers",
]


def _batched(x):
    return (x, True) if x.ndim == 4 else (x.unsqueeze(0), False)


class _FrozenNet(nn.Module):
    def freeze(self):
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()
        return self

    def _seeded_conv(self, gen, in_ch, out_ch, kernel=3):
        conv = nn.Conv2d(in_ch, out_ch, kernel, stride=2, padding=kernel // 2)
        bound = math.sqrt(6.0 / (in_ch * kernel * kernel))
        with torch.no_grad():
            conv.weight.copy_((torch.rand(conv.weight.shape, generator=gen) * 2 - 1) * bound)
            conv.bias.copy_((torch.rand(conv.bias.shape, generator=gen) * 2 - 1) * 0.1)
        return conv


class ToyIdentityEmbedder(_FrozenNet):
    """Three strided convs, global average pooling, fixed bias, l2 normalisation."""

    dim = 64

    def __init__(self, seed=1):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.convs = nn.ModuleList(
            [self._seeded_conv(gen, 3, 16), self._seeded_conv(gen, 16, 32), self._seeded_conv(gen, 32, self.dim)]
        )
        # Keeps the pooled vector away from zero for flat activations.
        bias = torch.randn(self.dim, generator=gen)
        self.register_buffer("offset", 0.1 * bias / bias.norm())
        self.freeze()

    def forward(self, x):
        x, batched = _batched(x)
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
        v = x.mean(dim=(2, 3)) + self.offset.to(x.dtype)
        v = v / v.norm(dim=1, keepdim=True)
        return v if batched else v[0]


def soft_argmax(logits):
    """Expected normalised ``(x, y)`` under a spatial softmax.

    ``logits`` is ``(..., H, W)``; returns ``(..., 2)`` in ``[0, 1]``.
    """
    h, w = logits.shape[-2:]
    p = torch.softmax(logits.flatten(-2), dim=-1).reshape(logits.shape)
    xs = torch.linspace(0, 1, w, dtype=logits.dtype)
    ys = torch.linspace(0, 1, h, dtype=logits.dtype)
    x = (p.sum(dim=-2) * xs).sum(dim=-1)
    y = (p.sum(dim=-1) * ys).sum(dim=-1)
    return torch.stack([x, y], dim=-1)


class ToyLandmarkEstimator(_FrozenNet):
    """Conv stack with ``N`` heatmap heads read out by spatial soft-argmax."""

    def __init__(self, num_landmarks=68, seed=2):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.num_landmarks = num_landmarks
        self.convs = nn.ModuleList([self._seeded_conv(gen, 3, 16), self._seeded_conv(gen, 16, 16)])
        head = nn.Conv2d(16, num_landmarks, 1)
        with torch.no_grad():
            head.weight.copy_(torch.randn(head.weight.shape, generator=gen) * 2.0)
            head.bias.zero_()
        self.head = head
        self.freeze()

    def forward(self, x):
        x, batched = _batched(x)
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
        coords = soft_argmax(self.head(x)).flatten(1)
        return coords if batched else coords[0]


class ToyPerceptualExtractor(_FrozenNet):
    """Three seeded conv levels; flattened activations of every level, concatenated."""

    def __init__(self, seed=3):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.convs = nn.ModuleList(
            [self._seeded_conv(gen, 3, 8), self._seeded_conv(gen, 8, 16), self._seeded_conv(gen, 16, 32)]
        )
        self.freeze()

    def forward(self, x):
        x, batched = _batched(x)
        feats = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
            feats.append(x.flatten(1))
        out = torch.cat(feats, dim=1)
        return out if batched else out[0]


def toy_identity_embed(x, seed=1):
    return ToyIdentityEmbedder(seed).to(x.dtype)(x)


def toy_landmark_estimate(x, seed=2, num_landmarks=68):
    return ToyLandmarkEstimator(num_landmarks, seed).to(x.dtype)(x)


def toy_perceptual_features(x, seed=3):
    return ToyPerceptualExtractor(seed).to(x.dtype)(x)


# ---------------------------------------------------------------------------
# Flow
# ---------------------------------------------------------------------------


def _translation_search(a, b, radius):
    """Integer displacement ``(dx, dy)`` with ``a[y, x] ~ b[y + dy, x + dx]``."""
    _, h, w = a.shape
    best = None
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            ya, yb = max(0, -dy), max(0, dy)
            xa, xb = max(0, -dx), max(0, dx)
            hh, ww = h - abs(dy), w - abs(dx)
            if hh <= 0 or ww <= 0:
                continue
            diff = np.abs(a[:, ya:ya + hh, xa:xa + ww] - b[:, yb:yb + hh, xb:xb + ww]).mean()
            key = (diff, dx * dx + dy * dy, dx, dy)
            if best is None or key < best:
                best = key
    return best[2], best[3]


def toy_flow_estimate(a, b, radius=None):
    """Global-translation flow from ``a`` to ``b`` by exhaustive integer search.

    Searches displacements in ``[-R, R]^2`` (``R = resolution / 8`` by
    default) for the minimum mean absolute difference over the overlap.
    Ties go to the smallest displacement norm, then lexicographic ``(dx, dy)``.
    Returns a constant ``(2, H, W)`` (or batched) field of pixel displacements.
    """
    if a.shape != b.shape:
        raise ShapeError(f"flow inputs differ in shape: {tuple(a.shape)} vs {tuple(b.shape)}")
    ab, batched = _batched(a)
    bb, _ = _batched(b)
    h, w = ab.shape[-2:]
    R = radius if radius is not None else max(1, h // 8)
    a_np = ab.detach().cpu().to(torch.float64).numpy()
    b_np = bb.detach().cpu().to(torch.float64).numpy()
    out = torch.zeros(ab.shape[0], 2, h, w, dtype=ab.dtype)
    for i in range(ab.shape[0]):
        dx, dy = _translation_search(a_np[i], b_np[i], R)
        out[i, 0] = dx
        out[i, 1] = dy
    return out if batched else out[0]


def analytic_translation_flow(v, shape, dtype=torch.float64):
    """Constant flow field equal to ``v = (dx, dy)`` over an ``(H, W)`` grid."""
    h, w = shape[-2:]
    v = torch.as_tensor(v, dtype=dtype)
    if not torch.isfinite(v).all():
        raise ValueError("flow vector must be finite")
    return v.view(2, 1, 1).expand(2, h, w).clone()


# ---------------------------------------------------------------------------
# Pose / expression (metric only)
# ---------------------------------------------------------------------------


def _quadrants(x):
    h, w = x.shape[-2:]
    h2, w2 = h // 2, w // 2
    return [x[..., :h2, :w2], x[..., :h2, w2:], x[..., h2:, :w2], x[..., h2:, w2:]]


def toy_pose_features(x):
    """Mean intensity of each image quadrant (4 values)."""
    x, batched = _batched(x)
    out = torch.stack([q.mean(dim=(1, 2, 3)) for q in _quadrants(x)], dim=1)
    return out if batched else out[0]


def toy_expression_features(x):
    """Mean absolute horizontal then vertical gradient per quadrant (8 values)."""
    x, batched = _batched(x)
    gx = (x[..., :, 1:] - x[..., :, :-1]).abs()
    gy = (x[..., 1:, :] - x[..., :-1, :]).abs()
    horiz = [q.mean(dim=(1, 2, 3)) for q in _quadrants(gx)]
    vert = [q.mean(dim=(1, 2, 3)) for q in _quadrants(gy)]
    out = torch.stack(horiz + vert, dim=1)
    return out if batched else out[0]


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------


@dataclass
class ProviderSet:
    identity_embedder: Callable
    landmark_estimator: Callable
    perceptual_extractor: Callable
    flow_estimator: Callable
    pose_estimator: Callable
    expression_estimator: Callable

    def to(self, dtype):
        for name in ("identity_embedder", "landmark_estimator", "perceptual_extractor"):
            p = getattr(self, name)
            if isinstance(p, nn.Module):
                p.to(dtype)
        return self


_REGISTRY: Dict[str, Dict[str, Callable]] = {
    "identity": {"toy": lambda seed, **kw: ToyIdentityEmbedder(seed + 1)},
    "landmarks": {"toy": lambda seed, num_landmarks=68, **kw: ToyLandmarkEstimator(num_landmarks, seed + 2)},
    "perceptual": {"toy": lambda seed, **kw: ToyPerceptualExtractor(seed + 3)},
    "flow": {"toy": lambda seed, **kw: toy_flow_estimate},
    "pose": {"toy": lambda seed, **kw: toy_pose_features},
    "expression": {"toy": lambda seed, **kw: toy_expression_features},
}

_FIELD_FOR_KIND = {
    "identity": "identity_embedder",
    "landmarks": "landmark_estimator",
    "perceptual": "perceptual_extractor",
    "flow": "flow_estimator",
    "pose": "pose_estimator",
    "expression": "expression_estimator",
}


def register_provider(kind, name, factory):
    """Register ``factory(seed, **options)`` under ``providers.<kind> = name``."""
    if kind not in _REGISTRY:
        raise InvalidConfigurationError(f"unknown provider kind {kind!r}; expected one of {sorted(_REGISTRY)}")
    _REGISTRY[kind][name] = factory


def build_providers(names=None, seed=0, num_landmarks=68):
    """Resolve provider names (default ``"toy"`` for every kind) into a :class:`ProviderSet`."""
    names = dict(names or {})
    unknown = set(names) - set(_REGISTRY)
    if unknown:
        raise InvalidConfigurationError(f"unknown provider kind(s): {sorted(unknown)}")
    resolved = {}
    for kind, field_name in _FIELD_FOR_KIND.items():
        name = names.get(kind, "toy")
        try:
            factory = _REGISTRY[kind][name]
        except KeyError:
            raise InvalidConfigurationError(f"no {kind} provider registered as {name!r}") from None
        resolved[field_name] = factory(seed, num_landmarks=num_landmarks)
    return ProviderSet(**resolved)
