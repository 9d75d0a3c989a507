"""Single-image swapping and the adversarial training loop."""

from __future__ import annotations

import contextlib
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional

import numpy as np
import torch

from . import blending, losses
from .errors import InvalidArgumentError, InvalidConfigurationError, LatentSwapError, PoisonedLossError, StageError
from .latent import (
    LatentCode,
    TransferDirection,
    apply_transfer_direction,
    compose_swap_code,
    split_code,
)
from .losses import LossBundle, LossWeights
from .nets import LandmarkSet, SwapModels, rasterize_heatmaps
from .perception import ProviderSet, build_providers

logger = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "SwapOptions",
    "SwapResult",
    "FaceSample",
    "Batch",
    "TrainState",
    "landmark_heatmaps",
    "swap_image",
    "sample_batch",
    "train_step",
    "pretrain_generator",
    "create_state",
]


@dataclass(frozen=True)
class TrainConfig:
    """Optimiser and schedule settings. Defaults follow the full-scale setup."""

    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 8
    iterations: int = 500_000
    weights: LossWeights = field(default_factory=LossWeights)
    p_same: float = 0.2
    seed: int = 0
    alpha: float = 0.8
    hm_scope: str = "mask"
    hard_mask: bool = False
    freeze_generator: bool = True
    train_inverter: bool = False
    r1_gamma: float = 0.0
    pretrain_steps: int = 0
    pretrain_learning_rate: float = 1e-3
    disable_appearance_swap: bool = False
    disable_background_transfer: bool = False

    def __post_init__(self):
        for name in ("learning_rate", "epsilon", "pretrain_learning_rate"):
            if not getattr(self, name) > 0:
                raise InvalidConfigurationError(f"{name} must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidConfigurationError("Adam betas must lie in [0, 1)")
        if self.batch_size < 1 or self.iterations < 0 or self.pretrain_steps < 0:
            raise InvalidConfigurationError("batch_size must be >= 1; iterations and pretrain_steps >= 0")
        if not 0 <= self.p_same <= 1:
            raise InvalidConfigurationError("p_same must lie in [0, 1]")
        if self.hm_scope not in ("mask", "global"):
            raise InvalidConfigurationError("hm_scope must be 'mask' or 'global'")
        if self.r1_gamma < 0 or self.alpha < 0:
            raise InvalidConfigurationError("r1_gamma and alpha must be >= 0")
        if isinstance(self.weights, dict):
            object.__setattr__(self, "weights", LossWeights(**self.weights))

    def effective_weights(self):
        if self.disable_appearance_swap:
            return replace(self.weights, st=0.0)
        return self.weights

    def to_dict(self):
        return asdict(self)

    @property
    def swap_options(self):
        return SwapOptions(
            hard_mask=self.hard_mask,
            disable_appearance_swap=self.disable_appearance_swap,
            disable_background_transfer=self.disable_background_transfer,
        )


@dataclass(frozen=True)
class SwapOptions:
    hard_mask: bool = False
    disable_appearance_swap: bool = False
    disable_background_transfer: bool = False


@dataclass(eq=False)
class SwapResult:
    side_output: torch.Tensor
    final: torch.Tensor
    swap_code: LatentCode
    direction: TransferDirection
    target_code: Optional[LatentCode] = None
    source_code: Optional[LatentCode] = None


@contextlib.contextmanager
def _stage(name):
    try:
        yield
    except StageError:
        raise
    except (LatentSwapError, ValueError, RuntimeError) as exc:
        raise StageError(name, exc) from exc


def _batch_images(x):
    return x if x.ndim == 4 else x.unsqueeze(0)


def _landmark_array(l):
    if isinstance(l, LandmarkSet):
        return torch.from_numpy(l.points)
    if isinstance(l, (list, tuple)) and l and isinstance(l[0], LandmarkSet):
        return torch.from_numpy(np.stack([s.points for s in l]))
    return torch.as_tensor(np.asarray(l) if not isinstance(l, torch.Tensor) else l)


def landmark_heatmaps(cfg, landmarks, dtype=torch.float32):
    """Batched ``(B, N, G, G)`` heatmaps from landmark sets or arrays."""
    pts = _landmark_array(landmarks)
    if pts.ndim == 2:
        pts = pts.unsqueeze(0)
    return rasterize_heatmaps(pts, cfg.grid, cfg.sigma, dtype=dtype)


@dataclass(eq=False)
class TargetEncoding:
    """Everything the swap needs from the target side, computed once."""

    code: LatentCode
    features: List[torch.Tensor]
    heatmaps: torch.Tensor


def encode_target_side(models, x_t, l_t):
    with _stage("invert_target"):
        w_t = LatentCode(models.inv(x_t), split_index=models.cfg.split_index)
    with _stage("encode_target"):
        F_t = models.tenc(x_t)
    with _stage("rasterize_target_landmarks"):
        H_t = landmark_heatmaps(models.cfg, l_t, dtype=x_t.dtype)
    return TargetEncoding(w_t, F_t, H_t)


def render(models, g_hat, h_app, F_t, m_t, x_t, options=SwapOptions()):
    """Synthesize, blend under the mask and decode. Returns ``(y_s, y_f, swap_code)``."""
    with _stage("compose_swap_code"):
        w_hat = compose_swap_code(g_hat, h_app)
    with _stage("synthesize"):
        y_s, F_s = models.gen(w_hat.vectors)
    if options.disable_background_transfer:
        with _stage("pixel_composite"):
            m = blending.downsample_mask(m_t, x_t.shape[-1]).to(y_s.dtype)
            y_f = m * y_s + (1 - m) * x_t
    else:
        with _stage("aggregate_pyramid"):
            agg = blending.aggregate_pyramid(F_s, F_t, m_t, hard=options.hard_mask)
        with _stage("decode_final"):
            y_f = models.dec(agg)
    return y_s, y_f, w_hat


def swap_image(models, x_s, x_t, m_t, l_s, l_t, options=SwapOptions()):
    """Run the full swap chain on a source/target pair (or batch of pairs).

    Inverts both faces, predicts the structure direction from the landmark
    heatmaps, composes the swap code from the edited source structure and
    the target appearance, synthesizes the side output, blends generator
    and target features under the inner-face mask and decodes the final face.
    """
    x_s, x_t = _batch_images(x_s), _batch_images(x_t)
    with _stage("invert_source"):
        w_s = LatentCode(models.inv(x_s), split_index=models.cfg.split_index)
    tgt = encode_target_side(models, x_t, l_t)
    with _stage("rasterize_source_landmarks"):
        H_s = landmark_heatmaps(models.cfg, l_s, dtype=x_s.dtype)
    with _stage("encode_structure_direction"):
        n = TransferDirection(models.lenc(H_s, tgt.heatmaps))
    g_s, h_s = split_code(w_s)
    _, h_t = split_code(tgt.code)
    with _stage("apply_transfer_direction"):
        g_hat = apply_transfer_direction(g_s, n)
    h_app = h_s if options.disable_appearance_swap else h_t
    y_s, y_f, w_hat = render(models, g_hat, h_app, tgt.features, m_t, x_t, options)
    return SwapResult(y_s, y_f, w_hat, n, target_code=tgt.code, source_code=w_s)


# ---------------------------------------------------------------------------
# Data and batches
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class FaceSample:
    """One aligned face: image ``(3, R, R)`` in ``[-1, 1]``, binary mask ``(R, R)``, landmarks ``(N, 2)``."""

    image: torch.Tensor
    mask: torch.Tensor
    landmarks: np.ndarray
    name: str = ""


@dataclass(eq=False)
class Batch:
    x_s: torch.Tensor
    x_t: torch.Tensor
    m_t: torch.Tensor
    l_s: np.ndarray
    l_t: np.ndarray
    same: torch.Tensor
    indices: List[tuple]


def sample_batch(dataset, batch_size, p_same, rng):
    """Draw ``batch_size`` source/target pairs.

    With probability ``p_same`` a pair reuses one sample as both source and
    target (``same`` flag set); otherwise two distinct samples are drawn.
    A one-item dataset can only produce same pairs.
    """
    n = len(dataset)
    if n == 0:
        raise InvalidArgumentError("cannot sample from an empty dataset")
    pairs = []
    for _ in range(batch_size):
        same = bool(rng.random() < p_same)
        i = int(rng.integers(n))
        if same or n == 1:
            j = i
        else:
            j = int(rng.integers(n - 1))
            j = j + 1 if j >= i else j
        pairs.append((i, j))
    src = [dataset[i] for i, _ in pairs]
    tgt = [dataset[j] for _, j in pairs]
    return Batch(
        x_s=torch.stack([s.image for s in src]),
        x_t=torch.stack([t.image for t in tgt]),
        m_t=torch.stack([torch.as_tensor(t.mask) for t in tgt]),
        l_s=np.stack([s.landmarks for s in src]),
        l_t=np.stack([t.landmarks for t in tgt]),
        same=torch.tensor([i == j for i, j in pairs]),
        indices=pairs,
    )


# ---------------------------------------------------------------------------
# Training state
# ---------------------------------------------------------------------------


def _adam(params, cfg, lr=None):
    return torch.optim.Adam(
        params, lr=cfg.learning_rate if lr is None else lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.epsilon
    )


@dataclass(eq=False)
class TrainState:
    models: SwapModels
    providers: ProviderSet
    config: TrainConfig
    opt_d: torch.optim.Optimizer
    opt_g: torch.optim.Optimizer
    rng: np.random.Generator
    iteration: int = 0
    provider_names: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    @property
    def model_config(self):
        return self.models.cfg


def generator_side_parameters(models, cfg):
    """Named parameters updated by the generator-side optimiser, in a fixed order."""
    names = ["lenc", "tenc", "dec"]
    if cfg.train_inverter:
        names.insert(0, "inv")
    if not cfg.freeze_generator:
        names.insert(0, "gen")
    out = []
    for net in names:
        out += [(f"{net}.{k}", p) for k, p in getattr(models, net).named_parameters()]
    return out


def create_state(model_cfg, train_cfg, provider_names=None, providers=None):
    """Fresh networks, optimisers and RNG, all derived from ``train_cfg.seed``."""
    models = SwapModels(model_cfg, seed=train_cfg.seed)
    _set_trainable(models, train_cfg)
    if providers is None:
        providers = build_providers(provider_names, seed=train_cfg.seed, num_landmarks=model_cfg.num_landmarks)
    opt_d = _adam(list(models.disc.parameters()), train_cfg)
    opt_g = _adam([p for _, p in generator_side_parameters(models, train_cfg)], train_cfg)
    rng = np.random.Generator(np.random.PCG64(train_cfg.seed))
    return TrainState(models, providers, train_cfg, opt_d, opt_g, rng, provider_names=dict(provider_names or {}))


def _set_trainable(models, cfg):
    trainable = {name for name, _ in generator_side_parameters(models, cfg)}
    for name, p in models.named_parameters():
        p.requires_grad_(name in trainable or name.startswith("disc."))


def compute_losses(state, batch, result):
    """Loss bundle for a forward swap result (generator side)."""
    cfg = state.config
    prov = state.providers
    weights = cfg.effective_weights()
    y_s, y_f = result.side_output, result.final
    zero = torch.zeros((), dtype=torch.float64)

    def maybe(name, fn):
        return fn() if getattr(weights, name) > 0 else zero

    for p in state.models.disc.parameters():
        p.requires_grad_(False)
    try:
        adv = maybe("adv", lambda: losses.adversarial_generator_loss(state.models.disc(y_f)))
    finally:
        for p in state.models.disc.parameters():
            p.requires_grad_(True)
    comps = {
        "adv": adv,
        "id": maybe("id", lambda: losses.identity_loss(y_f, batch.x_s, prov.identity_embedder)),
        "lmk": maybe("lmk", lambda: losses.landmark_alignment_loss(y_s, y_f, batch.x_t, prov.landmark_estimator)),
        "rec": maybe(
            "rec",
            lambda: losses.reconstruction_loss(
                y_s, y_f, batch.x_t, batch.same, alpha=cfg.alpha, perceptual=prov.perceptual_extractor
            ),
        ),
        "st": maybe("st", lambda: losses.style_transfer_loss(y_f, batch.x_t, batch.m_t, scope=cfg.hm_scope)),
    }
    total = losses.total_loss(comps, weights)
    return LossBundle(total=total, **comps)


def train_step(state, batch):
    """One discriminator update followed by one generator-side update."""
    cfg = state.config
    models = state.models
    models.train()
    result = swap_image(models, batch.x_s, batch.x_t, batch.m_t, batch.l_s, batch.l_t, cfg.swap_options)

    state.opt_d.zero_grad(set_to_none=True)
    d_loss = losses.discriminator_loss(models.disc(result.final.detach()), models.disc(batch.x_t))
    if cfg.r1_gamma > 0:
        d_loss = d_loss + 0.5 * cfg.r1_gamma * losses.r1_penalty(models.disc, batch.x_t)
    if not torch.isfinite(d_loss):
        raise PoisonedLossError("discriminator", d_loss.item())
    d_loss.backward()
    state.opt_d.step()

    state.opt_g.zero_grad(set_to_none=True)
    bundle = compute_losses(state, batch, result)
    if bundle.total.requires_grad:
        bundle.total.backward()
    state.opt_g.step()

    state.iteration += 1
    report = bundle.as_floats()
    report["disc"] = d_loss.item()
    state.history.append(report)
    return state, bundle


def pretrain_generator(state, dataset, steps, batch_size=None, lr=None):
    """Reconstruction-only warm-up of generator and inverter.

    Stands in for a pre-trained generator: minimises pixel plus perceptual
    error of ``gen(inv(x))`` against ``x``. Uses its own Adam optimiser,
    which is discarded afterwards; batch sampling draws from the state RNG.
    """
    cfg = state.config
    models = state.models
    params = list(models.gen.parameters()) + list(models.inv.parameters())
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad_(True)
    opt = _adam(params, cfg, lr=cfg.pretrain_learning_rate if lr is None else lr)
    perceptual = state.providers.perceptual_extractor
    bs = batch_size or cfg.batch_size
    history = []
    try:
        for _ in range(steps):
            idx = state.rng.integers(len(dataset), size=bs)
            x = torch.stack([dataset[int(i)].image for i in idx])
            y, _ = models.gen(models.inv(x))
            loss = losses.mse(y, x) + cfg.alpha * losses.mse(perceptual(y), perceptual(x))
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            history.append(loss.item())
    finally:
        for p, f in zip(params, flags):
            p.requires_grad_(f)
    return history


def fit(state, dataset, iterations=None, callback=None):
    """Pretraining (if configured) then ``iterations`` training steps.

    ``callback(state)`` runs after every step; a falsy return other than
    ``None`` stops training.
    """
    cfg = state.config
    if cfg.pretrain_steps and state.iteration == 0:
        pretrain_generator(state, dataset, cfg.pretrain_steps)
    n = cfg.iterations if iterations is None else iterations
    for _ in range(n):
        batch = sample_batch(dataset, cfg.batch_size, cfg.p_same, state.rng)
        train_step(state, batch)
        if callback is not None:
            keep = callback(state)
            if keep is not None and not keep:
                break
    return state
