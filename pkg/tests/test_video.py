import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from latentswap.errors import InvalidArgumentError, InvalidConfigurationError
from latentswap.latent import StructureCode
from latentswap.perception import analytic_translation_flow, toy_flow_estimate
from latentswap.synthetic import translate_image
from latentswap.video import (
    FrameSequence,
    VideoOptions,
    code_trajectory_loss,
    flow_trajectory_loss,
    flow_triple_penalty,
    swap_video,
)

D = torch.float64


def _codes(n, seed, shape=(4, 6)):
    g = torch.Generator().manual_seed(seed)
    return [StructureCode(torch.randn(*shape, generator=g, dtype=D)) for _ in range(n)]


# -- code trajectory ---------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10_000))
def test_code_trajectory_constant_offset(M, seed):
    tgt = [StructureCode(torch.randint(-9, 9, (4, 6)).to(D)) for _ in range(M)]
    C = torch.randint(-9, 9, (4, 6)).to(D)
    assert float(code_trajectory_loss([StructureCode(c.vectors + C) for c in tgt], tgt)) == 0.0


def test_code_trajectory_invariance_float():
    tgt, sw = _codes(4, 1), _codes(4, 2)
    C = torch.randn(4, 6, dtype=D)
    base = float(code_trajectory_loss(sw, tgt))
    shifted = float(code_trajectory_loss([StructureCode(c.vectors + C) for c in sw], tgt))
    assert math.isclose(base, shifted, rel_tol=1e-12)


def test_code_trajectory_constant_offset_difference():
    tgt = _codes(3, 3)
    # swapped offsets exceed the target's by 0.5 everywhere
    sw = [StructureCode(c.vectors + 0.5 * k) for k, c in enumerate(tgt)]
    assert math.isclose(float(code_trajectory_loss(sw, tgt)), 0.25, rel_tol=1e-12)


def test_code_trajectory_brute_force():
    sw, tgt = _codes(3, 4), _codes(3, 5)
    s, t = [c.vectors for c in sw], [c.vectors for c in tgt]
    expect = 0.5 * (((s[1] - s[0]) - (t[1] - t[0])).pow(2).mean() + ((s[2] - s[1]) - (t[2] - t[1])).pow(2).mean())
    assert math.isclose(float(code_trajectory_loss(sw, tgt)), float(expect), rel_tol=1e-12)


def test_code_trajectory_needs_two_frames():
    with pytest.raises(InvalidArgumentError):
        code_trajectory_loss(_codes(1, 0), _codes(1, 1))


# -- flow trajectory ---------------------------------------------------------

def _uniform_triple(shape=(8, 8)):
    return tuple(analytic_translation_flow(v, shape) for v in ((1, 0), (2, 0), (-2, 0)))


def test_flow_literal_uniform_motion():
    assert abs(float(flow_triple_penalty(*_uniform_triple(), mode="literal")) - math.sqrt(0.5)) <= 1e-9


def test_flow_midpoint_uniform_motion():
    assert abs(float(flow_triple_penalty(*_uniform_triple(), mode="midpoint"))) <= 1e-9


def test_flow_plain_mse_aggregation():
    assert math.isclose(float(flow_triple_penalty(*_uniform_triple(), aggregation="plain_mse")), 0.5)


def test_flow_static_sequence_zero():
    frames = [torch.rand(3, 16, 16, dtype=D)] * 4
    for mode in ("literal", "midpoint"):
        assert float(flow_trajectory_loss(frames, toy_flow_estimate, mode=mode)) == 0.0


def test_flow_analytic_provider_sequence():
    # frames are indices; the flow provider returns the analytic translation between them
    flow = lambda a, b: analytic_translation_flow((float(b - a), 0.0), (8, 8))
    frames = [torch.tensor(k, dtype=D) for k in range(3)]
    assert abs(float(flow_trajectory_loss(frames, flow, "literal")) - math.sqrt(0.5)) <= 1e-9
    assert abs(float(flow_trajectory_loss(frames, flow, "midpoint"))) <= 1e-9
    frames5 = [torch.tensor(k, dtype=D) for k in range(5)]
    assert abs(float(flow_trajectory_loss(frames5, flow, "literal")) - 3 * math.sqrt(0.5)) <= 1e-9


def test_toy_flow_recovers_translation():
    g = torch.Generator().manual_seed(0)
    base = torch.rand(3, 32, 32, generator=g, dtype=D)
    f = toy_flow_estimate(base, translate_image(base, 2, -1))
    assert f.shape == (2, 32, 32)
    assert f[0].unique().tolist() == [2.0] and f[1].unique().tolist() == [-1.0]
    assert toy_flow_estimate(base, base).abs().sum() == 0


def test_flow_needs_three_frames():
    with pytest.raises(InvalidArgumentError):
        flow_trajectory_loss([torch.zeros(3, 8, 8)] * 2, toy_flow_estimate)


def test_flow_penalty_nonnegative_random():
    g = torch.Generator().manual_seed(1)
    for _ in range(20):
        f = [torch.randn(2, 8, 8, generator=g, dtype=D) for _ in range(3)]
        for mode in ("literal", "midpoint"):
            assert float(flow_triple_penalty(*f, mode=mode)) >= 0


def test_video_options_validated():
    with pytest.raises(InvalidConfigurationError):
        VideoOptions(mode="smooth")
    with pytest.raises(InvalidConfigurationError):
        VideoOptions(ft_mode="bilinear")
    with pytest.raises(InvalidConfigurationError):
        VideoOptions(steps=-1)


# -- driver ------------------------------------------------------------------

def _sequence(face, M, masks=True):
    frames = [translate_image(face.image, k, 0) for k in range(M)]
    lms = [face.landmarks for _ in range(M)]
    return FrameSequence(frames, lms, [face.mask] * M if masks else None)


def test_independent_mode(tiny_models, providers, faces32):
    seq = _sequence(faces32[1], 3)
    out = swap_video(faces32[0].image, seq, tiny_models, providers, faces32[0].landmarks)
    assert len(out.frames) == 3
    assert all(f.shape == (3, 32, 32) and f.abs().max() <= 1 for f in out.frames)


def test_temporal_single_frame_falls_back(tiny_models, providers, faces32):
    seq = _sequence(faces32[1], 1)
    ind = swap_video(faces32[0].image, seq, tiny_models, providers, faces32[0].landmarks)
    tmp = swap_video(faces32[0].image, seq, tiny_models, providers, faces32[0].landmarks,
                     VideoOptions(mode="temporal"))
    assert torch.equal(ind.frames[0], tmp.frames[0])


def test_temporal_zero_steps_equals_independent(tiny_models, providers, faces32):
    seq = _sequence(faces32[1], 3)
    ind = swap_video(faces32[0].image, seq, tiny_models, providers, faces32[0].landmarks)
    tmp = swap_video(faces32[0].image, seq, tiny_models, providers, faces32[0].landmarks,
                     VideoOptions(mode="temporal", steps=0, lambda_ct=0, lambda_ft=0))
    assert all(torch.equal(a, b) for a, b in zip(ind.frames, tmp.frames))


def test_temporal_objective_non_increasing(tiny_models, providers, faces32):
    # give the landmark encoder non-zero output so the codes start off-trajectory
    with torch.no_grad():
        for p in tiny_models.lenc.parameters():
            p.add_(0.05 * torch.randn_like(p))
    flags = [p.requires_grad for p in tiny_models.parameters()]
    seq = _sequence(faces32[1], 3)
    res = swap_video(faces32[0].image, seq, tiny_models, providers, faces32[0].landmarks,
                     VideoOptions(mode="temporal", steps=4))
    h = res.objective_history
    assert len(h) >= 2
    assert all(b <= a for a, b in zip(h, h[1:]))
    assert h[-1] < h[0]
    assert [p.requires_grad for p in tiny_models.parameters()] == flags


def test_missing_mask_names_frame(tiny_models, providers, faces32):
    seq = _sequence(faces32[1], 3)
    seq.masks[2] = None
    with pytest.raises(InvalidConfigurationError, match="frame 2"):
        swap_video(faces32[0].image, seq, tiny_models, providers, faces32[0].landmarks)


def test_missing_landmarks_use_provider(tiny_models, providers, faces32):
    seq = _sequence(faces32[1], 2)
    seq.landmarks[1] = None
    out = swap_video(faces32[0].image, seq, tiny_models, providers, faces32[0].landmarks)
    assert len(out.frames) == 2
    seq.landmarks[1] = None
    with pytest.raises(InvalidConfigurationError, match="frame 1"):
        swap_video(faces32[0].image, seq, tiny_models, None, faces32[0].landmarks)
