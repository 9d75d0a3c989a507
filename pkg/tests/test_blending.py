import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from latentswap.blending import aggregate_level, aggregate_pyramid, binarize_mask, box_mask, downsample_mask
from latentswap.errors import InvalidArgumentError, ShapeError


def test_downsample_constant_and_checkerboard():
    assert torch.equal(downsample_mask(torch.ones(16, 16), 4), torch.ones(1, 1, 4, 4))
    checker = (torch.arange(8)[:, None] + torch.arange(8)[None, :]) % 2
    assert torch.equal(downsample_mask(checker.float(), 4), torch.full((1, 1, 4, 4), 0.5))


def test_downsample_single_pixel():
    m = torch.zeros(4, 4)
    m[1, 2] = 1
    assert downsample_mask(m, 1).item() == 1 / 16


def test_downsample_rejects_non_divisor():
    with pytest.raises(InvalidArgumentError):
        downsample_mask(torch.ones(12, 12), 5)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([(16, 8), (16, 4), (32, 8), (32, 2), (8, 8)]), st.integers(0, 10_000))
def test_downsample_matches_block_means(sizes, seed):
    size, r = sizes
    m = (np.random.default_rng(seed).random((size, size)) > 0.5).astype(np.float64)
    f = size // r
    brute = np.array([[m[i * f:(i + 1) * f, j * f:(j + 1) * f].mean() for j in range(r)] for i in range(r)])
    out = downsample_mask(torch.from_numpy(m), r)[0, 0].numpy()
    assert np.array_equal(out, brute)


def test_hard_threshold():
    m = torch.zeros(4, 4)
    m[:2, :2] = 1
    m[2, 2] = 1
    out = downsample_mask(m, 2, hard=True)[0, 0]
    assert out.tolist() == [[1.0, 0.0], [0.0, 0.0]]


def test_aggregate_examples():
    fs, ft = torch.full((1, 2, 4, 4), 2.0), torch.full((1, 2, 4, 4), 4.0)
    assert torch.equal(aggregate_level(fs, ft, torch.ones(4, 4)), fs)
    assert torch.equal(aggregate_level(fs, ft, torch.zeros(4, 4)), ft)
    assert torch.equal(aggregate_level(fs, ft, torch.full((4, 4), 0.5)), torch.full((1, 2, 4, 4), 3.0))


def test_aggregate_shape_errors():
    with pytest.raises(ShapeError):
        aggregate_level(torch.zeros(1, 2, 4, 4), torch.zeros(1, 3, 4, 4), torch.ones(4, 4))
    with pytest.raises(ShapeError):
        aggregate_level(torch.zeros(1, 2, 4, 4), torch.zeros(1, 2, 4, 4), torch.ones(8, 8))
    with pytest.raises(ShapeError):
        aggregate_pyramid([torch.zeros(1, 2, 4, 4)], [], torch.ones(4, 4))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_binary_mask_is_exact_selection(seed):
    g = torch.Generator().manual_seed(seed)
    fs = torch.randn(2, 3, 16, 16, generator=g)
    ft = torch.randn(2, 3, 16, 16, generator=g)
    m = (torch.rand(2, 16, 16, generator=g) > 0.5).float()
    out = aggregate_level(fs, ft, downsample_mask(m, 16))
    assert torch.equal(out, torch.where(m[:, None].bool(), fs, ft))


def test_convexity_on_1000_elements():
    g = torch.Generator().manual_seed(7)
    fs = torch.randn(1, 10, 10, 10, generator=g) * 100
    ft = torch.randn(1, 10, 10, 10, generator=g) * 100
    m = torch.rand(1, 1, 10, 10, generator=g)
    out = aggregate_level(fs, ft, m)
    assert out.numel() == 1000
    assert ((out >= torch.minimum(fs, ft)) & (out <= torch.maximum(fs, ft))).all()


def test_pyramid_identity_cases():
    g = torch.Generator().manual_seed(0)
    F = [torch.randn(1, 4, r, r, generator=g) for r in (8, 16, 32)]
    G = [torch.randn(1, 4, r, r, generator=g) for r in (8, 16, 32)]
    m = (torch.rand(32, 32, generator=g) > 0.3).float()
    assert all(torch.equal(a, b) for a, b in zip(aggregate_pyramid(F, F, m), F))
    assert all(torch.equal(a, b) for a, b in zip(aggregate_pyramid(F, G, torch.ones(32, 32)), F))
    out = aggregate_pyramid(F, G, m)
    for fs, ft, o in zip(F, G, out):
        mm = downsample_mask(m, fs.shape[-1])
        assert torch.allclose(o, mm * fs + (1 - mm) * ft, atol=1e-6)


def test_aggregate_gradients():
    g = torch.Generator().manual_seed(1)
    fs = torch.randn(1, 2, 8, 8, generator=g, dtype=torch.float64, requires_grad=True)
    ft = torch.randn(1, 2, 8, 8, generator=g, dtype=torch.float64, requires_grad=True)
    m = downsample_mask((torch.rand(32, 32, generator=g) > 0.5).double(), 8)
    assert torch.autograd.gradcheck(lambda a, b: aggregate_level(a, b, m), (fs, ft), rtol=1e-3)
    gs, gt = torch.autograd.grad(aggregate_level(fs, ft, m).sum(), (fs, ft))
    assert torch.allclose(gs, m.expand_as(gs)) and torch.allclose(gt, (1 - m).expand_as(gt))


def test_box_and_binarize():
    m = box_mask(8)
    assert m.sum() == 16 and m[2, 2] == 1 and m[1, 1] == 0
    assert binarize_mask(np.array([0, 127, 128, 255])).tolist() == [0, 0, 1, 1]
