"""Trainable networks and landmark heatmaps.

Networks:

* :class:`Generator` - style-modulated synthesis network driven by an
  extended latent code, two modulated layers per resolution level starting
  from a learned 4x4 constant. Emits the image and the per-level feature
  pyramid ``8 .. resolution``.
* :class:`FaceInverter` - feature-pyramid encoder with one map-to-vector head
  per latent row, heads grouped into coarse / medium / fine levels.
* :class:`LandmarkEncoder` - same backbone fed with source and target
  heatmaps, coarse and medium heads only, zero-initialised projections.
* :class:`TargetEncoder` / :class:`Decoder` - mirrored downsample and
  upsample stacks whose per-level shapes match the generator pyramid.
* :class:`Discriminator` - strided conv stack ending in a probability.

All images are ``B x 3 x R x R`` tensors in ``[-1, 1]``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InvalidConfigurationError, ShapeError
from .latent import LatentCode, TransferDirection, structure_split_index

logger = logging.getLogger(__name__)

__all__ = [
    "GeneratorConfig",
    "LandmarkSet",
    "num_latent_vectors",
    "channel_width",
    "rasterize_heatmaps",
    "Generator",
    "FaceInverter",
    "LandmarkEncoder",
    "TargetEncoder",
    "Decoder",
    "Discriminator",
    "SwapModels",
    "synthesize",
    "invert_face",
    "encode_structure_direction",
    "encode_target",
    "decode_final",
    "discriminate",
]

_LRELU_SLOPE = 0.2
_LRELU_GAIN = math.sqrt(2.0)


def _is_pow2(n):
    return isinstance(n, (int, np.integer)) and n > 0 and (n & (n - 1)) == 0


def num_latent_vectors(resolution):
    """Rows of the extended latent code for a generator at ``resolution``.

    >>> num_latent_vectors(1024)
    18
    """
    if not _is_pow2(resolution) or not 4 <= resolution <= 1024:
        raise InvalidConfigurationError(
            f"resolution must be a power of two in [4, 1024], got {resolution!r}"
        )
    return 2 * (int(math.log2(resolution)) - 1)


@dataclass(frozen=True)
class GeneratorConfig:
    """Model configuration shared by every network.

    ``channel_scale`` shrinks all channel widths for desk-scale runs.
    ``structure_k`` overrides the proportional structure split.
    """

    resolution: int = 1024
    latent_width: int = 512
    channel_cap: int = 512
    channel_budget: int = 32768
    channel_scale: float = 1.0
    structure_k: Optional[int] = None
    num_landmarks: int = 68
    heatmap_grid: Optional[int] = None
    heatmap_sigma: Optional[float] = None
    noise: bool = False
    noise_seed: int = 0

    def __post_init__(self):
        if not _is_pow2(self.resolution) or not 32 <= self.resolution <= 1024:
            raise InvalidConfigurationError(
                f"resolution must be a power of two in [32, 1024], got {self.resolution!r}"
            )
        if self.latent_width < 1:
            raise InvalidConfigurationError("latent_width must be >= 1")
        if not 0.0 < self.channel_scale <= 1.0:
            raise InvalidConfigurationError("channel_scale must lie in (0, 1]")
        if self.channel_cap < 4 or self.channel_budget < 4:
            raise InvalidConfigurationError("channel_cap and channel_budget must be >= 4")
        L = num_latent_vectors(self.resolution)
        if self.structure_k is not None and not 1 <= self.structure_k <= L - 1:
            raise InvalidConfigurationError(f"structure_k must lie in [1, {L - 1}]")
        if self.num_landmarks < 1:
            raise InvalidConfigurationError("num_landmarks must be >= 1")
        if self.grid < 16:
            raise InvalidConfigurationError("heatmap_grid must be >= 16 for the landmark encoder")
        if self.sigma <= 0:
            raise InvalidConfigurationError("heatmap_sigma must be > 0")

    @property
    def num_latent(self):
        return num_latent_vectors(self.resolution)

    @property
    def split_index(self):
        if self.structure_k is not None:
            return self.structure_k
        return structure_split_index(self.num_latent)

    @property
    def levels(self):
        """Pyramid resolutions, coarsest first: 8, 16, ..., resolution."""
        return [8 * 2 ** i for i in range(int(math.log2(self.resolution)) - 2)]

    @property
    def grid(self):
        return self.heatmap_grid if self.heatmap_grid is not None else self.resolution

    @property
    def sigma(self):
        return self.heatmap_sigma if self.heatmap_sigma is not None else self.grid / 32.0

    def channels(self, level_resolution):
        return channel_width(level_resolution, self)

    def to_dict(self):
        return asdict(self)


def channel_width(level_resolution, cfg):
    """Feature channels at ``level_resolution``.

    ``min(cap, budget / r) * scale`` rounded to the nearest multiple of 4,
    never below 4. At full scale this yields 512 up to 64px, then halves
    per level down to 32 at 1024px.
    """
    raw = min(cfg.channel_cap, cfg.channel_budget / level_resolution) * cfg.channel_scale
    return max(4, 4 * math.floor(raw / 4 + 0.5))


# ---------------------------------------------------------------------------
# Landmarks and heatmaps
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LandmarkSet:
    """``N`` landmark points in normalised ``[0, 1]`` image coordinates."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ShapeError(f"landmarks must have shape (N, 2), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("landmarks contain non-finite values")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)


class _ClampCounter:
    """Counts landmarks that fell outside ``[0, 1]`` and had to be clamped."""

    def __init__(self):
        self.count = 0


heatmap_clamp_warnings = _ClampCounter()


def rasterize_heatmaps(landmarks, grid, sigma, dtype=torch.float32):
    """Gaussian heatmaps centred on each landmark.

    Parameters
    ----------
    landmarks : LandmarkSet, array-like or tensor
        ``(N, 2)`` or batched ``(B, N, 2)`` normalised ``(x, y)`` coordinates.
    grid : int
        Heatmap side length ``G``; landmark ``(x, y)`` sits at pixel
        ``(x * (G - 1), y * (G - 1))``.
    sigma : float
        Gaussian standard deviation in pixels.

    Returns
    -------
    torch.Tensor
        ``(N, G, G)`` or ``(B, N, G, G)``, indexed ``[..., v (row), u (col)]``.
    """
    if grid < 8:
        raise InvalidConfigurationError(f"heatmap grid must be >= 8, got {grid}")
    if sigma <= 0:
        raise InvalidConfigurationError(f"sigma must be > 0, got {sigma}")
    if isinstance(landmarks, LandmarkSet):
        landmarks = landmarks.points
    pts = torch.as_tensor(np.asarray(landmarks) if not isinstance(landmarks, torch.Tensor) else landmarks)
    pts = pts.to(torch.float64)
    if pts.shape[-1] != 2 or pts.ndim not in (2, 3):
        raise ShapeError(f"landmarks must have shape (N, 2) or (B, N, 2), got {tuple(pts.shape)}")
    outside = (pts < 0) | (pts > 1)
    if outside.any():
        n_out = int(outside.any(dim=-1).sum())
        heatmap_clamp_warnings.count += n_out
        logger.warning("clamped %d landmark(s) outside [0, 1] to the border", n_out)
        pts = pts.clamp(0.0, 1.0)
    centers = pts * (grid - 1)
    coords = torch.arange(grid, dtype=torch.float64)
    du = coords.view(1, grid) - centers[..., 0, None, None]
    dv = coords.view(grid, 1) - centers[..., 1, None, None]
    heat = torch.exp(-(du ** 2 + dv ** 2) / (2.0 * sigma ** 2))
    return heat.to(dtype)


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


def _lrelu(x):
    return F.leaky_relu(x, _LRELU_SLOPE) * _LRELU_GAIN


class EqualConv2d(nn.Module):
    """Conv with ``1 / sqrt(fan_in)`` weight scaling.

    With ``equalized=True`` the scale is applied at runtime (the generator's
    parameterisation); otherwise it is folded into the initial weights.
    """

    def __init__(self, in_ch, out_ch, kernel, stride=1, padding=None, bias=True, equalized=True):
        super().__init__()
        scale = 1.0 / math.sqrt(in_ch * kernel * kernel)
        w = torch.randn(out_ch, in_ch, kernel, kernel)
        self.weight = nn.Parameter(w if equalized else w * scale)
        self.bias = nn.Parameter(torch.zeros(out_ch)) if bias else None
        self.scale = scale if equalized else 1.0
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding

    def forward(self, x):
        return F.conv2d(x, self.weight * self.scale, self.bias, stride=self.stride, padding=self.padding)


class EqualLinear(nn.Module):
    def __init__(self, in_dim, out_dim, bias_init=0.0, zero_init=False, equalized=True):
        super().__init__()
        scale = 1.0 / math.sqrt(in_dim)
        w = torch.zeros(out_dim, in_dim) if zero_init else torch.randn(out_dim, in_dim)
        self.weight = nn.Parameter(w if equalized else w * scale)
        self.bias = nn.Parameter(torch.full((out_dim,), float(bias_init)))
        self.scale = scale if equalized else 1.0

    def forward(self, x):
        return F.linear(x, self.weight * self.scale, self.bias)


class Blur(nn.Module):
    """Fixed separable ``[1, 2, 1]`` low-pass filter (depthwise)."""

    def __init__(self, channels):
        super().__init__()
        k = torch.tensor([1.0, 2.0, 1.0])
        k = torch.outer(k, k)
        k = k / k.sum()
        self.register_buffer("kernel", k.expand(channels, 1, 3, 3).clone(), persistent=False)
        self.channels = channels

    def forward(self, x):
        return F.conv2d(x, self.kernel.to(x.dtype), padding=1, groups=self.channels)


class ModulatedConv2d(nn.Module):
    """Style-modulated, demodulated convolution with optional 2x upsampling."""

    def __init__(self, in_ch, out_ch, kernel, w_dim, upsample=False, demodulate=True):
        super().__init__()
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.kernel = kernel
        self.upsample = upsample
        self.demodulate = demodulate
        self.weight = nn.Parameter(torch.randn(out_ch, in_ch, kernel, kernel))
        self.scale = 1.0 / math.sqrt(in_ch * kernel * kernel)
        self.affine = EqualLinear(w_dim, in_ch, bias_init=1.0)
        self.bias = nn.Parameter(torch.zeros(out_ch))

    def forward(self, x, w):
        batch = x.shape[0]
        style = self.affine(w)
        weight = self.scale * self.weight.unsqueeze(0) * style[:, None, :, None, None]
        if self.demodulate:
            demod = torch.rsqrt(weight.pow(2).sum(dim=(2, 3, 4)) + 1e-8)
            weight = weight * demod[:, :, None, None, None]
        if self.upsample:
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        h, wd = x.shape[-2:]
        x = x.reshape(1, batch * self.in_ch, h, wd)
        weight = weight.reshape(batch * self.out_ch, self.in_ch, self.kernel, self.kernel)
        out = F.conv2d(x, weight, padding=self.kernel // 2, groups=batch)
        out = out.reshape(batch, self.out_ch, h, wd)
        return out + self.bias.view(1, -1, 1, 1)


class _StyledLayer(nn.Module):
    def __init__(self, in_ch, out_ch, w_dim, upsample, noise):
        super().__init__()
        self.conv = ModulatedConv2d(in_ch, out_ch, 3, w_dim, upsample=upsample)
        self.noise_strength = nn.Parameter(torch.zeros(())) if noise else None

    def forward(self, x, w, noise_gen=None):
        x = self.conv(x, w)
        if self.noise_strength is not None and noise_gen is not None:
            n = torch.randn(x.shape[0], 1, *x.shape[-2:], generator=noise_gen, dtype=torch.float64)
            x = x + self.noise_strength * n.to(x.dtype)
        return _lrelu(x)


# ---------------------------------------------------------------------------
# Generator
# ---------------------------------------------------------------------------


class Generator(nn.Module):
    """Style-modulated synthesis network with per-level feature taps."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        D = cfg.latent_width
        c4 = cfg.channels(4)
        self.const = nn.Parameter(torch.randn(1, c4, 4, 4))
        self.layers = nn.ModuleList(
            [_StyledLayer(c4, c4, D, False, cfg.noise), _StyledLayer(c4, c4, D, False, cfg.noise)]
        )
        prev = c4
        for res in cfg.levels:
            ch = cfg.channels(res)
            self.layers.append(_StyledLayer(prev, ch, D, True, cfg.noise))
            self.layers.append(_StyledLayer(ch, ch, D, False, cfg.noise))
            prev = ch
        self.to_rgb = EqualConv2d(prev, 3, 1)
        assert len(self.layers) == cfg.num_latent

    def forward(self, w):
        """``w`` is a ``(B, L, D)`` tensor; returns ``(image, pyramid)``."""
        cfg = self.cfg
        if w.ndim != 3 or w.shape[1] != cfg.num_latent or w.shape[2] != cfg.latent_width:
            raise ShapeError(
                f"generator expects codes of shape (B, {cfg.num_latent}, {cfg.latent_width}), got {tuple(w.shape)}"
            )
        noise_gen = None
        if cfg.noise:
            noise_gen = torch.Generator().manual_seed(cfg.noise_seed)
        x = self.const.expand(w.shape[0], -1, -1, -1).to(w.dtype)
        x = self.layers[0](x, w[:, 0], noise_gen)
        x = self.layers[1](x, w[:, 1], noise_gen)
        pyramid = []
        for i in range(len(cfg.levels)):
            x = self.layers[2 + 2 * i](x, w[:, 2 + 2 * i], noise_gen)
            x = self.layers[3 + 2 * i](x, w[:, 3 + 2 * i], noise_gen)
            pyramid.append(x)
        image = torch.tanh(self.to_rgb(x))
        return image, pyramid


def _check_image(x, cfg, what="image"):
    r = cfg.resolution
    if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != r or x.shape[3] != r:
        raise ShapeError(f"{what} must have shape (B, 3, {r}, {r}), got {tuple(x.shape)}")


def synthesize(generator, w):
    """Side-output image and feature pyramid for latent code ``w``.

    Accepts a :class:`LatentCode` (or raw tensor) with or without a batch
    dimension; outputs are batched.
    """
    vec = w.vectors if isinstance(w, LatentCode) else w
    if vec.ndim == 2:
        vec = vec.unsqueeze(0)
    return generator(vec)


# ---------------------------------------------------------------------------
# Inverter / landmark encoder
# ---------------------------------------------------------------------------


def _head_groups(num_rows, split):
    """Row counts for the coarse, medium and fine head groups."""
    coarse = math.floor(3 * num_rows / 18 + 0.5)
    coarse = max(1, min(coarse, split - 1)) if split >= 2 else split
    return coarse, split - coarse, num_rows - split


class _DownBlock(nn.Module):
    def __init__(self, in_ch, out_ch, downsample):
        super().__init__()
        self.blur = Blur(in_ch) if downsample else None
        self.conv = EqualConv2d(in_ch, out_ch, 3, stride=2 if downsample else 1, equalized=False)

    def forward(self, x):
        if self.blur is not None:
            x = self.blur(x)
        return _lrelu(self.conv(x))


class _Map2Style(nn.Module):
    """Strided convs down to 1x1, then a linear projection to one latent row."""

    def __init__(self, channels, spatial, out_dim, zero_init=False):
        super().__init__()
        n_down = int(math.log2(spatial))
        self.convs = nn.ModuleList(
            [EqualConv2d(channels, channels, 3, stride=2, equalized=False) for _ in range(n_down)]
        )
        self.linear = EqualLinear(channels, out_dim, zero_init=zero_init, equalized=False)

    def forward(self, x):
        for conv in self.convs:
            x = _lrelu(conv(x))
        return self.linear(x.flatten(1))


class _PyramidEncoder(nn.Module):
    """Conv backbone with a three-level top-down feature pyramid.

    Coarse features come from the 8x8 map, medium from 16x16 and fine from
    32x32 (each merged top-down with the coarser level).
    """

    def __init__(self, in_ch, input_res, cfg, n_coarse, n_medium, n_fine, zero_init=False):
        super().__init__()
        self.input_res = input_res
        self.stem = _DownBlock(in_ch, cfg.channels(input_res), downsample=False)
        blocks = []
        res = input_res
        while res > 8:
            blocks.append(_DownBlock(cfg.channels(res), cfg.channels(res // 2), downsample=True))
            res //= 2
        self.blocks = nn.ModuleList(blocks)
        head_ch = cfg.channels(8)
        self.lat16 = EqualConv2d(cfg.channels(16), head_ch, 1, equalized=False) if n_medium + n_fine else None
        self.lat32 = EqualConv2d(cfg.channels(32), head_ch, 1, equalized=False) if n_fine else None
        D = cfg.latent_width
        self.coarse = nn.ModuleList([_Map2Style(head_ch, 8, D, zero_init) for _ in range(n_coarse)])
        self.medium = nn.ModuleList([_Map2Style(head_ch, 16, D, zero_init) for _ in range(n_medium)])
        self.fine = nn.ModuleList([_Map2Style(head_ch, 32, D, zero_init) for _ in range(n_fine)])

    def forward(self, x):
        feats = {self.input_res: self.stem(x)}
        h = feats[self.input_res]
        res = self.input_res
        for block in self.blocks:
            h = block(h)
            res //= 2
            feats[res] = h
        p8 = feats[8]
        rows = [head(p8) for head in self.coarse]
        if self.lat16 is not None:
            p16 = self.lat16(feats[16]) + F.interpolate(p8, scale_factor=2, mode="bilinear", align_corners=False)
            rows += [head(p16) for head in self.medium]
            if self.lat32 is not None:
                p32 = self.lat32(feats[32]) + F.interpolate(p16, scale_factor=2, mode="bilinear", align_corners=False)
                rows += [head(p32) for head in self.fine]
        return torch.stack(rows, dim=1)


class FaceInverter(nn.Module):
    """Image -> extended latent code, one head per latent row."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        L, K = cfg.num_latent, cfg.split_index
        self.groups = _head_groups(L, K)
        self.encoder = _PyramidEncoder(3, cfg.resolution, cfg, *self.groups)

    def forward(self, x):
        _check_image(x, self.cfg)
        return self.encoder(x)


class LandmarkEncoder(nn.Module):
    """Source/target heatmaps -> structure transfer direction (``K x D``).

    Uses coarse and medium heads only; the final projections start at zero
    so a fresh encoder returns the zero direction.
    """

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        L, K = cfg.num_latent, cfg.split_index
        coarse, medium, _ = _head_groups(L, K)
        self.encoder = _PyramidEncoder(
            2 * cfg.num_landmarks, cfg.grid, cfg, coarse, medium, 0, zero_init=True
        )

    def forward(self, heat_s, heat_t):
        if heat_s.shape != heat_t.shape:
            raise ShapeError(f"heatmap stacks differ: {tuple(heat_s.shape)} vs {tuple(heat_t.shape)}")
        expected = (self.cfg.num_landmarks, self.cfg.grid, self.cfg.grid)
        if heat_s.ndim != 4 or tuple(heat_s.shape[1:]) != expected:
            raise ShapeError(f"heatmaps must have shape (B, {expected}), got {tuple(heat_s.shape)}")
        return self.encoder(torch.cat([heat_s, heat_t], dim=1))


# ---------------------------------------------------------------------------
# Target encoder / decoder / discriminator
# ---------------------------------------------------------------------------


class TargetEncoder(nn.Module):
    """Downsample stack emitting target features matching the generator pyramid."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        levels = cfg.levels[::-1]
        blocks = [_DownBlock(3, cfg.channels(levels[0]), downsample=False)]
        for hi, lo in zip(levels[:-1], levels[1:]):
            blocks.append(_DownBlock(cfg.channels(hi), cfg.channels(lo), downsample=True))
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x):
        _check_image(x, self.cfg)
        feats = []
        for block in self.blocks:
            x = block(x)
            feats.append(x)
        return feats[::-1]


class Decoder(nn.Module):
    """Mirror of :class:`TargetEncoder` using transpose convolutions to upsample."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        levels = cfg.levels
        c0 = cfg.channels(levels[0])
        self.first = EqualConv2d(c0, c0, 3, equalized=False)
        self.ups = nn.ModuleList()
        self.fuse = nn.ModuleList()
        prev = c0
        for res in levels[1:]:
            ch = cfg.channels(res)
            self.ups.append(nn.ConvTranspose2d(prev, ch, 4, stride=2, padding=1))
            self.fuse.append(EqualConv2d(2 * ch, ch, 3, equalized=False))
            prev = ch
        self.to_rgb = EqualConv2d(prev, 3, 1, equalized=False)

    def forward(self, pyramid):
        if len(pyramid) != len(self.cfg.levels):
            raise ShapeError(f"decoder expects {len(self.cfg.levels)} pyramid levels, got {len(pyramid)}")
        x = _lrelu(self.first(pyramid[0]))
        for up, fuse, feat in zip(self.ups, self.fuse, pyramid[1:]):
            x = _lrelu(up(x))
            x = _lrelu(fuse(torch.cat([x, feat], dim=1)))
        return torch.tanh(self.to_rgb(x))


class Discriminator(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        res = cfg.resolution
        self.stem = _DownBlock(3, cfg.channels(res), downsample=False)
        blocks = []
        while res > 4:
            blocks.append(_DownBlock(cfg.channels(res), cfg.channels(res // 2), downsample=True))
            res //= 2
        self.blocks = nn.ModuleList(blocks)
        self.out = EqualLinear(cfg.channels(4) * 16, 1, equalized=False)

    def logits(self, x):
        _check_image(x, self.cfg)
        h = self.stem(x)
        for block in self.blocks:
            h = block(h)
        return self.out(h.flatten(1)).squeeze(1)

    def forward(self, x):
        return torch.sigmoid(self.logits(x))


class SwapModels(nn.Module):
    """Container for the six networks; parameter names prefix the checkpoint keys."""

    NAMES = ("gen", "inv", "lenc", "tenc", "dec", "disc")

    def __init__(self, cfg: GeneratorConfig, seed=0):
        super().__init__()
        self.cfg = cfg
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.gen = Generator(cfg)
            self.inv = FaceInverter(cfg)
            self.lenc = LandmarkEncoder(cfg)
            self.tenc = TargetEncoder(cfg)
            self.dec = Decoder(cfg)
            self.disc = Discriminator(cfg)


# ---------------------------------------------------------------------------
# Functional entry points
# ---------------------------------------------------------------------------


def invert_face(inverter, x):
    """Latent code of image batch ``x``."""
    vec = inverter(x)
    return LatentCode(vec, split_index=inverter.cfg.split_index)


def encode_structure_direction(lenc, heat_s, heat_t):
    """Structure transfer direction from source and target heatmap stacks."""
    if heat_s.ndim == 3:
        heat_s, heat_t = heat_s.unsqueeze(0), heat_t.unsqueeze(0)
    return TransferDirection(lenc(heat_s, heat_t))


def encode_target(tenc, x_t):
    return tenc(x_t)


def decode_final(dec, pyramid):
    return dec(pyramid)


def discriminate(disc, x):
    return disc(x)
