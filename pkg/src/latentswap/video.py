"""Temporal constraints on swapped sequences and the video swapping driver.

Two penalties keep consecutive swapped frames coherent:

* the code trajectory penalty matches frame-to-frame offsets of the swapped
  structure codes to those of the target codes;
* the flow trajectory penalty looks at flow triples ``(k, k+1, k+2)`` and
  penalises the temporal Laplacian of the flow, one root-mean-square term
  per triple (a group-sparse sum over triples).

``swap_video`` either swaps frames independently or refines the per-frame
structure codes with the networks frozen, using gradient descent with a
backtracking line search so the objective never increases.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import torch

from . import losses
from .errors import InvalidArgumentError, InvalidConfigurationError, ShapeError
from .latent import LatentCode, StructureCode, TransferDirection, apply_transfer_direction, split_code
from .losses import LossWeights
from .nets import LandmarkSet
from .pipeline import SwapOptions, encode_target_side, landmark_heatmaps, render, swap_image

logger = logging.getLogger(__name__)

__all__ = [
    "FrameSequence",
    "VideoOptions",
    "VideoResult",
    "code_trajectory_loss",
    "flow_triple_penalty",
    "flow_trajectory_loss",
    "swap_video",
]

FT_MODES = ("literal", "midpoint")
FT_AGGREGATIONS = ("group", "plain_mse")


@dataclass(eq=False)
class FrameSequence:
    """``M`` frames ``(3, R, R)`` with optional per-frame landmarks and masks."""

    frames: List[torch.Tensor]
    landmarks: Optional[List[LandmarkSet]] = None
    masks: Optional[List[torch.Tensor]] = None

    def __post_init__(self):
        if len(self.frames) < 1:
            raise InvalidArgumentError("a frame sequence needs at least one frame")
        shape = tuple(self.frames[0].shape)
        if any(tuple(f.shape) != shape for f in self.frames):
            raise ShapeError("all frames must share one resolution")
        for name in ("landmarks", "masks"):
            items = getattr(self, name)
            if items is not None and len(items) != len(self.frames):
                raise ShapeError(f"{name} list has {len(items)} entries for {len(self.frames)} frames")

    def __len__(self):
        return len(self.frames)


@dataclass(frozen=True)
class VideoOptions:
    mode: str = "independent"
    lambda_ct: float = 1.0
    lambda_ft: float = 1.0
    lambda_id: float = LossWeights().id
    lambda_lmk: float = LossWeights().lmk
    steps: int = 10
    step_size: float = 0.1
    max_backtracks: int = 8
    ft_mode: str = "literal"
    ft_aggregation: str = "group"

    def __post_init__(self):
        if self.mode not in ("independent", "temporal"):
            raise InvalidConfigurationError(f"video mode must be 'independent' or 'temporal', got {self.mode!r}")
        if self.ft_mode not in FT_MODES:
            raise InvalidConfigurationError(f"ft_mode must be one of {FT_MODES}")
        if self.ft_aggregation not in FT_AGGREGATIONS:
            raise InvalidConfigurationError(f"ft_aggregation must be one of {FT_AGGREGATIONS}")
        if self.steps < 0 or self.step_size <= 0 or self.max_backtracks < 0:
            raise InvalidConfigurationError("steps >= 0, step_size > 0 and max_backtracks >= 0 required")


@dataclass(eq=False)
class VideoResult:
    frames: List[torch.Tensor]
    side_outputs: List[torch.Tensor]
    objective_history: List[float] = field(default_factory=list)


def _vec(code):
    return code.vectors if isinstance(code, StructureCode) else torch.as_tensor(code)


def code_trajectory_loss(swap_structs, target_structs):
    """Mean over ``k`` of the MSE between swapped and target code offsets."""
    if len(swap_structs) != len(target_structs):
        raise ShapeError("swapped and target code lists differ in length")
    M = len(swap_structs)
    if M < 2:
        raise InvalidArgumentError("code trajectory needs at least two frames")
    g = [_vec(c) for c in swap_structs]
    t = [_vec(c) for c in target_structs]
    if any(a.shape != g[0].shape for a in g + t):
        raise ShapeError("all structure codes must share one shape")
    terms = [losses.mse(g[k] - g[k - 1], t[k] - t[k - 1]) for k in range(1, M)]
    return torch.stack(terms).mean()


def flow_triple_penalty(f_fwd1, f_fwd2, f_bwd2, mode="literal", aggregation="group"):
    """Penalty for one frame triple given flows ``k=>k+1``, ``k=>k+2`` and ``k+2=>k``.

    ``literal`` compares ``(f_fwd2 + f_bwd2) / 2`` with ``f_fwd1``;
    ``midpoint`` compares ``(f_fwd2 - f_bwd2) / 4``, which vanishes under
    uniform motion. ``group`` aggregation returns the root of the mean square
    residual, ``plain_mse`` the mean square itself.
    """
    if mode == "literal":
        pred = (f_fwd2 + f_bwd2) / 2
    elif mode == "midpoint":
        pred = (f_fwd2 - f_bwd2) / 4
    else:
        raise InvalidConfigurationError(f"ft_mode must be one of {FT_MODES}")
    ms = (pred - f_fwd1).pow(2).mean()
    if aggregation == "group":
        return ms.sqrt()
    if aggregation == "plain_mse":
        return ms
    raise InvalidConfigurationError(f"ft_aggregation must be one of {FT_AGGREGATIONS}")


def flow_trajectory_loss(frames, flow, mode="literal", aggregation="group"):
    """Sum of per-triple flow penalties over ``k = 0 .. M-3``."""
    if isinstance(frames, FrameSequence):
        frames = frames.frames
    M = len(frames)
    if M < 3:
        raise InvalidArgumentError("flow trajectory needs at least three frames")
    total = 0.0
    for k in range(M - 2):
        total = total + flow_triple_penalty(
            flow(frames[k], frames[k + 1]),
            flow(frames[k], frames[k + 2]),
            flow(frames[k + 2], frames[k]),
            mode=mode,
            aggregation=aggregation,
        )
    return total


def _frame_inputs(targets, k, landmark_provider):
    if targets.masks is None or targets.masks[k] is None:
        raise InvalidConfigurationError(f"frame {k}: no inner-face mask available")
    if targets.landmarks is not None and targets.landmarks[k] is not None:
        lm = targets.landmarks[k]
    elif landmark_provider is not None:
        with torch.no_grad():
            coords = landmark_provider(targets.frames[k].unsqueeze(0))[0]
        lm = LandmarkSet(coords.reshape(-1, 2).double().numpy())
    else:
        raise InvalidConfigurationError(f"frame {k}: no landmarks and no landmark provider configured")
    return targets.masks[k], lm


def swap_video(x_s, targets, models, providers, l_s, options=VideoOptions(), swap_options=SwapOptions()):
    """Swap the source face into every frame of ``targets``.

    ``independent`` mode runs the single-image swap per frame. ``temporal``
    mode starts from the same per-frame structure codes and takes
    ``options.steps`` descent steps on the code/flow trajectory terms plus
    per-frame identity and landmark terms, with every network frozen.
    """
    M = len(targets)
    inputs = [_frame_inputs(targets, k, providers.landmark_estimator if providers else None) for k in range(M)]
    mode = options.mode
    if mode == "temporal" and M < 2:
        logger.info("temporal mode with a single frame falls back to independent swapping")
        mode = "independent"

    with torch.no_grad():
        if mode == "independent":
            finals, sides = [], []
            for k, (mask, lm) in enumerate(inputs):
                res = swap_image(models, x_s, targets.frames[k], mask, l_s, lm, swap_options)
                finals.append(res.final[0])
                sides.append(res.side_output[0])
            return VideoResult(finals, sides)

        x_s_b = x_s.unsqueeze(0) if x_s.ndim == 3 else x_s
        w_s = LatentCode(models.inv(x_s_b), split_index=models.cfg.split_index)
        g_s, h_s = split_code(w_s)
        H_s = landmark_heatmaps(models.cfg, l_s, dtype=x_s_b.dtype)
        per_frame = []
        for k, (mask, lm) in enumerate(inputs):
            x_t = targets.frames[k].unsqueeze(0)
            tgt = encode_target_side(models, x_t, lm)
            n = TransferDirection(models.lenc(H_s, tgt.heatmaps))
            g_hat = apply_transfer_direction(g_s, n).vectors
            g_t, h_t = split_code(tgt.code)
            h_app = h_s if swap_options.disable_appearance_swap else h_t
            per_frame.append((x_t, mask, tgt, g_t.vectors, h_app, g_hat))

    codes = [pf[5].clone() for pf in per_frame]
    target_codes = [pf[3] for pf in per_frame]

    def objective(code_list, with_grad):
        ctx = torch.enable_grad() if with_grad else torch.no_grad()
        with ctx:
            finals, sides = [], []
            per_frame_terms = 0.0
            for (x_t, mask, tgt, _, h_app, _), g in zip(per_frame, code_list):
                y_s, y_f, _ = render(models, StructureCode(g), h_app, tgt.features, mask, x_t, swap_options)
                finals.append(y_f[0])
                sides.append(y_s[0])
                term = 0.0
                if options.lambda_id > 0:
                    term = term + options.lambda_id * losses.identity_loss(y_f, x_s_b, providers.identity_embedder)
                if options.lambda_lmk > 0:
                    term = term + options.lambda_lmk * losses.landmark_alignment_loss(
                        y_s, y_f, x_t, providers.landmark_estimator
                    )
                per_frame_terms = per_frame_terms + term
            value = per_frame_terms / len(code_list)
            if options.lambda_ct > 0:
                value = value + options.lambda_ct * code_trajectory_loss(code_list, target_codes)
            if options.lambda_ft > 0 and len(finals) >= 3:
                value = value + options.lambda_ft * flow_trajectory_loss(
                    finals, providers.flow_estimator, options.ft_mode, options.ft_aggregation
                )
            value = torch.as_tensor(value, dtype=torch.float64)
        return value, finals, sides

    flags = [p.requires_grad for p in models.parameters()]
    for p in models.parameters():
        p.requires_grad_(False)
    try:
        return _descend(codes, objective, options)
    finally:
        for p, f in zip(models.parameters(), flags):
            p.requires_grad_(f)


def _descend(codes, objective, options):
    """Steepest descent with Armijo backtracking; the objective never increases."""
    value, finals, sides = objective(codes, with_grad=False)
    history = [value.item()]
    step = options.step_size
    for _ in range(options.steps):
        variables = [c.detach().clone().requires_grad_(True) for c in codes]
        val, _, _ = objective(variables, with_grad=True)
        if not val.requires_grad:
            break
        grads = torch.autograd.grad(val, variables, allow_unused=True)
        grads = [torch.zeros_like(v) if g is None else g for v, g in zip(variables, grads)]
        sq_norm = float(sum(g.pow(2).sum() for g in grads))
        if sq_norm == 0.0:
            break
        accepted = False
        trial_step = step
        for _ in range(options.max_backtracks + 1):
            trial = [c - trial_step * g for c, g in zip(codes, grads)]
            trial_val, trial_finals, trial_sides = objective(trial, with_grad=False)
            if trial_val.item() <= history[-1] - 1e-4 * trial_step * sq_norm:
                accepted = True
                break
            trial_step *= 0.5
        if not accepted:
            break
        codes, finals, sides = trial, trial_finals, trial_sides
        history.append(trial_val.item())
    return VideoResult(finals, sides, history)
