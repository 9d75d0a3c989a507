import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from latentswap.config import TOY_MODEL, RunConfig, load_config, parse_config
from latentswap.data import (
    from_uint8,
    load_dataset,
    load_frame_dir,
    load_image,
    load_landmarks,
    load_mask,
    save_dataset,
    save_frame_dir,
    save_image,
    save_landmarks,
    save_mask,
    to_uint8,
)
from latentswap.errors import InvalidArgumentError, InvalidConfigurationError, ShapeError
from latentswap.video import FrameSequence


def test_uint8_conversion_rounds_half_up():
    x = torch.tensor([-1.0, 1.0, 0.0, -2.0, 2.0, 2 / 255 - 1]).view(3, 1, 2)
    out = to_uint8(x)
    # 0 -> 127.5 rounds up to 128; out-of-range values clamp
    assert out.transpose(2, 0, 1).ravel().tolist() == [0, 255, 128, 0, 255, 1]


@settings(max_examples=30, deadline=None)
@given(arrays(np.uint8, (4, 5, 3)))
def test_uint8_round_trip(arr):
    assert np.array_equal(to_uint8(from_uint8(arr)), arr)


def test_image_and_mask_files(tmp_path, faces32):
    f = faces32[0]
    save_image(f.image, tmp_path / "x.png")
    back = load_image(tmp_path / "x.png", 32)
    assert (back - f.image).abs().max() <= 1 / 127.5 + 1e-6
    save_mask(f.mask, tmp_path / "m.png")
    assert torch.equal(load_mask(tmp_path / "m.png", 32), f.mask)
    with pytest.raises(ShapeError):
        load_image(tmp_path / "x.png", 64)


def test_landmark_files(tmp_path):
    pts = np.array([[0.1, 0.2], [0.9, 0.5]])
    save_landmarks(pts, tmp_path / "l.json")
    assert np.array_equal(load_landmarks(tmp_path / "l.json").points, pts)
    (tmp_path / "bad.json").write_text("[[1, 2, 3]]")
    with pytest.raises(InvalidArgumentError):
        load_landmarks(tmp_path / "bad.json")


def test_dataset_round_trip(tmp_path, faces32):
    save_dataset(faces32, tmp_path)
    back = load_dataset(tmp_path, 32)
    assert [s.name for s in back] == [s.name for s in faces32]
    assert all(torch.equal(a.mask, b.mask) for a, b in zip(back, faces32))
    assert all(np.allclose(a.landmarks, b.landmarks) for a, b in zip(back, faces32))


def test_dataset_fallbacks(tmp_path, faces32, providers):
    save_image(faces32[0].image, tmp_path / "only.png")
    with pytest.raises(InvalidArgumentError):
        load_dataset(tmp_path, 32)
    (s,) = load_dataset(tmp_path, 32, landmark_estimator=providers.landmark_estimator)
    assert s.landmarks.shape == (68, 2)
    assert s.mask.sum() > 0
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(InvalidArgumentError):
        load_dataset(empty, 32)


def test_frame_dir_round_trip(tmp_path, faces32):
    seq = FrameSequence([f.image for f in faces32], [f.landmarks for f in faces32], [f.mask for f in faces32])
    save_frame_dir(seq, tmp_path)
    back = load_frame_dir(tmp_path, 32)
    assert len(back) == 3
    assert all(torch.equal(a, b) for a, b in zip(back.masks, seq.masks))


def test_config_defaults_and_overrides():
    cfg = parse_config("""
[model]
resolution = 32
channel_scale = 0.0625

[train]
iterations = 7
lambda_st = 0.5
hard_mask = yes

[providers]
identity = toy

[video]
mode = temporal
ft_mode = midpoint
""")
    assert cfg.model.resolution == 32 and cfg.model.latent_width == TOY_MODEL.latent_width
    assert cfg.train.iterations == 7 and cfg.train.weights.st == 0.5 and cfg.train.weights.id == 2.0
    assert cfg.train.hard_mask is True
    assert cfg.providers == {"identity": "toy"}
    assert cfg.video.mode == "temporal" and cfg.video.ft_mode == "midpoint"
    assert parse_config("") == RunConfig()


@pytest.mark.parametrize("text", [
    "[bogus]\nx = 1\n",
    "[model]\nresolutoin = 64\n",
    "[model]\nresolution = sixty\n",
    "[model]\nresolution = 48\n",
    "[train]\nlambda_adv = -1\n",
    "[train]\nhard_mask = maybe\n",
    "[providers]\nvoice = toy\n",
    "[video]\nmode = smooth\n",
    "not an ini file",
])
def test_config_errors(text):
    with pytest.raises(InvalidConfigurationError):
        parse_config(text)


def test_load_config_file(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[model]\nstructure_k = 3\n")
    assert load_config(p).model.split_index == 3
    p.write_text("[model]\nstructure_k = none\n")
    assert load_config(p).model.structure_k is None
