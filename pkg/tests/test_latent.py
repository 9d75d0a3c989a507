import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from latentswap.errors import InvalidConfigurationError, ShapeError
from latentswap.latent import (
    AppearanceCode,
    LatentCode,
    StructureCode,
    TransferDirection,
    apply_transfer_direction,
    compose_swap_code,
    merge_code,
    split_code,
    structure_split_index,
)


def _code(L, D, k=None, seed=0, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    return LatentCode(torch.randn(L, D, generator=g, dtype=dtype), k or structure_split_index(L))


@pytest.mark.parametrize("L,K", [(18, 7), (2, 1), (10, 4), (14, 5), (16, 6), (12, 5)])
def test_split_index_examples(L, K):
    assert structure_split_index(L) == K


def test_split_index_rejects_small():
    with pytest.raises(InvalidConfigurationError):
        structure_split_index(1)


@given(st.integers(2, 200))
def test_split_index_bounds_and_monotone(L):
    k = structure_split_index(L)
    assert 1 <= k <= L - 1
    assert structure_split_index(L + 1) >= k


def test_split_sizes_and_ordering():
    rows = torch.arange(18, dtype=torch.float64).unsqueeze(1).expand(18, 4).clone()
    g, h = split_code(LatentCode(rows, 7))
    assert g.vectors.shape == (7, 4) and h.vectors.shape == (11, 4)
    assert g.vectors[:, 0].tolist() == list(range(7))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 20), st.integers(1, 16), st.integers(0, 10_000))
def test_merge_split_round_trip(L, D, seed):
    w = _code(L, D, seed=seed)
    assert merge_code(*split_code(w)).equal(w)


def test_merge_block_structure():
    out = merge_code(StructureCode(torch.zeros(7, 3)), AppearanceCode(torch.ones(11, 3)))
    assert out.split_index == 7
    assert torch.equal(out.vectors[:7], torch.zeros(7, 3))
    assert torch.equal(out.vectors[7:], torch.ones(11, 3))


def test_merge_width_mismatch():
    with pytest.raises(ShapeError):
        merge_code(StructureCode(torch.zeros(7, 3)), AppearanceCode(torch.ones(11, 4)))


def test_apply_direction_examples():
    g = StructureCode(torch.tensor([[1.0, 2.0]]))
    out = apply_transfer_direction(g, TransferDirection(torch.tensor([[0.5, -1.0]])))
    assert out.vectors.tolist() == [[1.5, 1.0]]
    assert torch.equal(apply_transfer_direction(g, TransferDirection(torch.zeros(1, 2))).vectors, g.vectors)
    assert torch.equal(apply_transfer_direction(g, TransferDirection(-g.vectors)).vectors, torch.zeros(1, 2))


def test_apply_direction_shape_mismatch():
    with pytest.raises(ShapeError):
        apply_transfer_direction(StructureCode(torch.zeros(7, 3)), TransferDirection(torch.zeros(6, 3)))


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
def test_apply_direction_linear(a, b, seed):
    g = torch.Generator().manual_seed(seed)
    base, n1, n2 = (torch.randn(4, 5, generator=g, dtype=torch.float64) for _ in range(3))
    out = apply_transfer_direction(StructureCode(base), TransferDirection(a * n1 + b * n2))
    assert torch.allclose(out.vectors, base + a * n1 + b * n2, rtol=0, atol=1e-12)


def test_compose_is_disentangled():
    w_s, w_t = _code(18, 6, seed=1), _code(18, 6, seed=2)
    g_s, h_s = split_code(w_s)
    _, h_t = split_code(w_t)
    n = TransferDirection(torch.randn(7, 6, dtype=torch.float64))
    g_hat = apply_transfer_direction(g_s, n)
    out = compose_swap_code(g_hat, h_t)
    assert torch.equal(out.vectors[7:], h_t.vectors)
    assert torch.equal(out.vectors[:7], g_s.vectors + n.vectors)
    # no-op swap reproduces the source
    assert compose_swap_code(apply_transfer_direction(g_s, TransferDirection(torch.zeros(7, 6, dtype=torch.float64))),
                             h_s).equal(w_s)


def test_inputs_not_modified():
    w = _code(10, 4)
    before = w.vectors.clone()
    g, h = split_code(w)
    compose_swap_code(apply_transfer_direction(g, TransferDirection(torch.ones_like(g.vectors))), h)
    assert torch.equal(w.vectors, before)


def test_batched_codes():
    w = LatentCode(torch.randn(3, 10, 4), 4)
    g, h = split_code(w)
    assert g.vectors.shape == (3, 4, 4)
    assert merge_code(g, h).equal(w)


def test_rejects_non_finite():
    with pytest.raises(ValueError):
        StructureCode(torch.tensor([[float("nan")]]))


def test_rejects_bad_split():
    with pytest.raises(InvalidConfigurationError):
        LatentCode(torch.zeros(4, 2), 4)
