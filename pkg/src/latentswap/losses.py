"""Training objectives for the swapping networks.

Every squared-norm term is an element-mean squared error, so magnitudes do
not depend on image resolution. Scores passed to the adversarial losses are
probabilities; the argument of every log is clamped below at ``EPS_LOG``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields

import numpy as np
import torch
from scipy.stats import rankdata

from .errors import (
    ContractViolationError,
    DegenerateEmbeddingError,
    InvalidArgumentError,
    InvalidConfigurationError,
    PoisonedLossError,
    ShapeError,
)

logger = logging.getLogger(__name__)

EPS_LOG = 1e-8

__all__ = [
    "EPS_LOG",
    "LossWeights",
    "LossBundle",
    "mse",
    "adversarial_generator_loss",
    "discriminator_loss",
    "identity_loss",
    "landmark_alignment_loss",
    "reconstruction_loss",
    "histogram_map",
    "quantile_match",
    "style_transfer_loss",
    "total_loss",
    "r1_penalty",
]

COMPONENTS = ("adv", "id", "lmk", "rec", "st")


@dataclass(frozen=True)
class LossWeights:
    """Weights of the adversarial, identity, landmark, reconstruction and style terms."""

    adv: float = 1.0
    id: float = 2.0
    lmk: float = 0.1
    rec: float = 2.0
    st: float = 0.2

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v) or v < 0:
                raise InvalidConfigurationError(f"loss weight {f.name} must be finite and >= 0, got {v}")

    def as_dict(self):
        return {name: getattr(self, name) for name in COMPONENTS}


@dataclass
class LossBundle:
    adv: torch.Tensor
    id: torch.Tensor
    lmk: torch.Tensor
    rec: torch.Tensor
    st: torch.Tensor
    total: torch.Tensor

    def components(self):
        return {name: getattr(self, name) for name in COMPONENTS}

    def as_floats(self):
        return {name: _scalar(getattr(self, name)) for name in COMPONENTS + ("total",)}


def _scalar(v):
    return float(v.detach()) if isinstance(v, torch.Tensor) else float(v)


def mse(a, b):
    return (a - b).pow(2).mean()


def _scores(scores):
    scores = torch.as_tensor(scores)
    if scores.numel() == 0:
        raise InvalidArgumentError("empty score batch")
    return scores.to(torch.float64)


def _neg_log(p):
    # Clamp the log argument rather than the score: saturated scores cost
    # -log(EPS_LOG) while perfect ones cost exactly 0.
    return -torch.log(p.clamp(min=EPS_LOG))


def adversarial_generator_loss(scores):
    """Mean of ``-log D(y_f)`` over the batch."""
    return _neg_log(_scores(scores)).mean()


def discriminator_loss(fake_scores, real_scores):
    """Mean ``-log(1 - D(fake))`` plus mean ``-log D(real)``."""
    fake = _scores(fake_scores)
    real = _scores(real_scores)
    return _neg_log(1.0 - fake).mean() + _neg_log(real).mean()


def _unit(v, what):
    v = v.flatten(1) if v.ndim > 1 else v.unsqueeze(0)
    norm = v.norm(dim=1, keepdim=True)
    if (norm.detach() == 0).any():
        raise DegenerateEmbeddingError(f"{what} embedding is the zero vector")
    return v / norm


def identity_loss(y_f, x_s, embed):
    """``1 - cos(embed(y_f), embed(x_s))`` averaged over the batch."""
    a = _unit(embed(y_f), "swapped-face")
    b = _unit(embed(x_s), "source-face")
    return (1.0 - (a * b).sum(dim=1)).mean()


def landmark_alignment_loss(y_s, y_f, x_t, estimate):
    est_s, est_f, est_t = estimate(y_s), estimate(y_f), estimate(x_t)
    if not est_s.shape == est_f.shape == est_t.shape:
        raise ContractViolationError(
            f"landmark estimator returned inconsistent shapes {tuple(est_s.shape)}, "
            f"{tuple(est_f.shape)}, {tuple(est_t.shape)}"
        )
    return mse(est_s, est_t) + mse(est_f, est_t)


def _per_sample_mse(a, b):
    if a.ndim < 2:
        return (a - b).pow(2).mean().reshape(1)
    return (a - b).pow(2).flatten(1).mean(dim=1)


def reconstruction_loss(y_s, y_f, x_t, same_identity, alpha=0.8, perceptual=None):
    """Pixel plus perceptual reconstruction error, only on pairs with ``x_s == x_t``.

    ``same_identity`` is a bool or a per-sample boolean tensor; samples where
    it is false contribute zero and the result is averaged over the batch.
    """
    if y_s.shape != x_t.shape or y_f.shape != x_t.shape:
        raise ShapeError("reconstruction_loss expects images of identical shape")
    feat = perceptual if perceptual is not None else (lambda x: x)
    flags = torch.as_tensor(same_identity, dtype=torch.bool)
    if not flags.any():
        return torch.zeros((), dtype=y_f.dtype)
    f_t = feat(x_t)
    per = (
        _per_sample_mse(y_f, x_t)
        + alpha * _per_sample_mse(feat(y_f), f_t)
        + _per_sample_mse(y_s, x_t)
        + alpha * _per_sample_mse(feat(y_s), f_t)
    )
    flags = flags.reshape(-1).to(per.dtype)
    if flags.numel() == 1:
        flags = flags.expand_as(per)
    return (per * flags).mean()


def quantile_match(values, reference):
    """Rank-based quantile matching of ``values`` onto ``reference``'s distribution."""
    n = values.size
    ref_sorted = np.sort(reference)
    ranks = rankdata(values, method="average") - 1.0
    # position = quantile * (n_ref - 1); multiply first so equal counts land
    # exactly on integer order statistics.
    if n > 1:
        pos = ranks * (ref_sorted.size - 1) / (n - 1)
    else:
        pos = np.full(n, 0.5 * (ref_sorted.size - 1))
    return np.interp(pos, np.arange(ref_sorted.size), ref_sorted)


def _mask_like(m, image):
    m = torch.as_tensor(m).detach()
    if m.ndim == 2:
        m = m.expand(image.shape[0], *m.shape)
    elif m.ndim == 4:
        m = m[:, 0]
    if m.shape[0] == 1 and image.shape[0] > 1:
        m = m.expand(image.shape[0], *m.shape[1:])
    if m.shape != (image.shape[0],) + tuple(image.shape[-2:]):
        raise ShapeError(f"mask shape {tuple(m.shape)} does not match images {tuple(image.shape)}")
    return m.cpu().numpy() > 0.5


def histogram_map(y, ref, m, scope="mask", return_flag=False):
    """Per-channel histogram matching of ``y``'s masked pixels onto ``ref``'s.

    The pixel with (tie-averaged) rank ``r`` among ``n`` masked pixels of
    ``y`` takes the value at quantile ``r / (n - 1)`` of ``ref``'s masked
    values, linearly interpolated between order statistics. Pixels outside
    the mask are copied from ``y``. The result is detached from the graph.

    With ``scope="global"`` the mask is ignored and whole channels are
    matched. If the mask is empty ``y`` is returned unchanged and, when
    ``return_flag`` is set, the flag is ``True``.
    """
    if scope not in ("mask", "global"):
        raise InvalidConfigurationError(f"hm_scope must be 'mask' or 'global', got {scope!r}")
    batched = y.ndim == 4
    yb = y.detach() if batched else y.detach().unsqueeze(0)
    rb = ref.detach() if batched else ref.detach().unsqueeze(0)
    if yb.shape != rb.shape:
        raise ShapeError(f"image shapes differ: {tuple(yb.shape)} vs {tuple(rb.shape)}")
    if scope == "global":
        mask = np.ones((yb.shape[0],) + tuple(yb.shape[-2:]), dtype=bool)
    else:
        mask = _mask_like(m, yb)
    y_np = yb.cpu().to(torch.float64).numpy()
    r_np = rb.cpu().to(torch.float64).numpy()
    out = y_np.copy()
    empty = False
    for b in range(y_np.shape[0]):
        mb = mask[b]
        if not mb.any():
            empty = True
            continue
        for c in range(y_np.shape[1]):
            out[b, c][mb] = quantile_match(y_np[b, c][mb], r_np[b, c][mb])
    if empty:
        logger.warning("histogram_map: empty mask, returning input unchanged")
    result = torch.from_numpy(out).to(dtype=y.dtype, device=y.device)
    if not batched:
        result = result[0]
    return (result, empty) if return_flag else result


def style_transfer_loss(y_f, x_t, m, scope="mask"):
    """MSE between ``y_f`` and its histogram-mapped guidance (a constant target)."""
    guide = histogram_map(y_f, x_t, m, scope=scope)
    return mse(y_f, guide)


def total_loss(components, weights=LossWeights()):
    """Weighted sum of the five components; raises on a non-finite component."""
    if isinstance(components, LossBundle):
        components = components.components()
    total = 0.0
    for name in COMPONENTS:
        value = components[name]
        if not math.isfinite(_scalar(value)):
            raise PoisonedLossError(name, _scalar(value))
        total = total + getattr(weights, name) * value
    return total


def r1_penalty(disc, real):
    """Squared gradient norm of the discriminator logit at real samples."""
    real = real.detach().requires_grad_(True)
    logits = disc.logits(real)
    (grad,) = torch.autograd.grad(logits.sum(), real, create_graph=True)
    return grad.pow(2).flatten(1).sum(1).mean()
