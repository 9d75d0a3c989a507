import numpy as np
import pytest
import torch

from latentswap.config import TOY_MODEL
from latentswap.nets import GeneratorConfig, SwapModels
from latentswap.perception import build_providers
from latentswap.synthetic import synthetic_faces

# small enough for per-test construction on a CPU
TINY = GeneratorConfig(resolution=32, latent_width=8, channel_scale=1 / 64, heatmap_grid=16, heatmap_sigma=1.0,
                       num_landmarks=68)


@pytest.fixture
def tiny_cfg():
    return TINY


@pytest.fixture
def tiny_models():
    return SwapModels(TINY, seed=0).eval()


@pytest.fixture
def toy_models():
    return SwapModels(TOY_MODEL, seed=0).eval()


@pytest.fixture
def providers():
    return build_providers(seed=0)


@pytest.fixture
def faces32():
    return synthetic_faces(3, 32, seed=0)


@pytest.fixture
def faces64():
    return synthetic_faces(3, 64, seed=0)


@pytest.fixture
def gen():
    return torch.Generator().manual_seed(1234)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
