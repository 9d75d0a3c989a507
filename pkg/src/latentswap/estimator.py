"""scikit-learn style front end: ``FaceSwapper().fit(faces).transform(pairs)``."""

from __future__ import annotations

from collections import namedtuple
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import checkpoint
from .data import load_dataset
from .losses import LossWeights
from .nets import GeneratorConfig
from .perception import build_providers
from .pipeline import FaceSample, TrainConfig, create_state, fit, pretrain_generator, swap_image
from .validation import check_image, check_landmarks, check_mask

__all__ = ["FaceSwapper", "SwapPair"]

SwapPair = namedtuple("SwapPair", "source target mask source_landmarks target_landmarks")

_MODEL_PARAMS = ("resolution", "latent_width", "channel_scale", "structure_k", "num_landmarks",
                 "heatmap_grid", "heatmap_sigma")
_TRAIN_PARAMS = ("learning_rate", "batch_size", "iterations", "pretrain_steps", "p_same", "alpha",
                 "hm_scope", "hard_mask", "freeze_generator", "r1_gamma", "seed")


class FaceSwapper(BaseEstimator, TransformerMixin):
    """Trainable latent-space face swapper.

    Parameters mirror the model and training configuration; defaults are the
    desk-scale settings (64px, 16-channel networks). ``fit`` trains on a list
    of :class:`~latentswap.pipeline.FaceSample` (or a dataset directory);
    ``transform`` swaps a list of :data:`SwapPair` and returns the final
    faces as an ``(n, 3, R, R)`` array in ``[-1, 1]``.
    """

    def __init__(self, resolution=64, latent_width=32, channel_scale=1 / 32, structure_k=None,
                 num_landmarks=68, heatmap_grid=32, heatmap_sigma=1.0, learning_rate=1e-4,
                 batch_size=4, iterations=1000, pretrain_steps=300, p_same=0.2,
                 lambda_adv=1.0, lambda_id=2.0, lambda_lmk=0.1, lambda_rec=2.0, lambda_st=0.2,
                 alpha=0.8, hm_scope="mask", hard_mask=False, freeze_generator=True, r1_gamma=50.0, seed=0,
                 providers=None):
        self.resolution = resolution
        self.latent_width = latent_width
        self.channel_scale = channel_scale
        self.structure_k = structure_k
        self.num_landmarks = num_landmarks
        self.heatmap_grid = heatmap_grid
        self.heatmap_sigma = heatmap_sigma
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.iterations = iterations
        self.pretrain_steps = pretrain_steps
        self.p_same = p_same
        self.lambda_adv = lambda_adv
        self.lambda_id = lambda_id
        self.lambda_lmk = lambda_lmk
        self.lambda_rec = lambda_rec
        self.lambda_st = lambda_st
        self.alpha = alpha
        self.hm_scope = hm_scope
        self.hard_mask = hard_mask
        self.freeze_generator = freeze_generator
        self.r1_gamma = r1_gamma
        self.seed = seed
        self.providers = providers

    def _configs(self):
        model = GeneratorConfig(**{k: getattr(self, k) for k in _MODEL_PARAMS})
        weights = LossWeights(self.lambda_adv, self.lambda_id, self.lambda_lmk, self.lambda_rec, self.lambda_st)
        train = TrainConfig(weights=weights, **{k: getattr(self, k) for k in _TRAIN_PARAMS})
        return model, train

    def _dataset(self, X, providers):
        if isinstance(X, (str, Path)):
            return load_dataset(X, self.resolution, landmark_estimator=providers.landmark_estimator)
        samples = []
        for i, s in enumerate(X):
            if not isinstance(s, FaceSample):
                raise TypeError(f"X[{i}] must be a FaceSample, got {type(s).__name__}")
            samples.append(FaceSample(
                check_image(s.image, self.resolution, f"X[{i}].image"),
                check_mask(s.mask, self.resolution, f"X[{i}].mask"),
                check_landmarks(s.landmarks, self.num_landmarks, f"X[{i}].landmarks"),
                s.name,
            ))
        if not samples:
            raise ValueError("cannot fit on an empty dataset")
        return samples

    def fit(self, X, y=None):
        model_cfg, train_cfg = self._configs()
        providers = build_providers(self.providers, seed=self.seed, num_landmarks=self.num_landmarks)
        data = self._dataset(X, providers)
        self.state_ = create_state(model_cfg, train_cfg, provider_names=self.providers, providers=providers)
        fit(self.state_, data)
        self.n_iter_ = self.state_.iteration
        return self

    def pretrain(self, X):
        """Only run the reconstruction warm-up of generator and inverter."""
        if not hasattr(self, "state_"):
            model_cfg, train_cfg = self._configs()
            providers = build_providers(self.providers, seed=self.seed, num_landmarks=self.num_landmarks)
            self.state_ = create_state(model_cfg, train_cfg, provider_names=self.providers, providers=providers)
        data = self._dataset(X, self.state_.providers)
        return pretrain_generator(self.state_, data, self.pretrain_steps)

    def swap(self, source, target, mask, source_landmarks, target_landmarks):
        """Swap one pair; returns a :class:`~latentswap.pipeline.SwapResult`."""
        check_is_fitted(self, "state_")
        r = self.resolution
        with torch.no_grad():
            return swap_image(
                self.state_.models,
                check_image(source, r, "source"),
                check_image(target, r, "target"),
                check_mask(mask, r),
                check_landmarks(source_landmarks, self.num_landmarks, "source_landmarks"),
                check_landmarks(target_landmarks, self.num_landmarks, "target_landmarks"),
                self.state_.config.swap_options,
            )

    def transform(self, X):
        check_is_fitted(self, "state_")
        out = [self.swap(*SwapPair(*pair)).final[0].numpy() for pair in X]
        return np.stack(out) if out else np.zeros((0, 3, self.resolution, self.resolution), np.float32)

    def save(self, path):
        check_is_fitted(self, "state_")
        checkpoint.save_checkpoint(self.state_, path)

    @classmethod
    def load(cls, path):
        state = checkpoint.load_checkpoint(path)
        return cls.from_state(state)

    @classmethod
    def from_state(cls, state):
        m, t = state.models.cfg, state.config
        params = {k: getattr(m, k) for k in _MODEL_PARAMS}
        params.update({k: getattr(t, k) for k in _TRAIN_PARAMS})
        params.update({f"lambda_{k}": v for k, v in t.weights.as_dict().items()})
        est = cls(providers=state.provider_names or None, **params)
        est.state_ = state
        est.n_iter_ = state.iteration
        return est
