import json
import struct

import numpy as np
import pytest
import torch

from latentswap.checkpoint import (
    FORMAT_VERSION,
    MAGIC,
    load_checkpoint,
    save_checkpoint,
    state_from_bytes,
    state_to_bytes,
)
from latentswap.errors import CorruptCheckpointError
from latentswap.pipeline import TrainConfig, create_state, sample_batch, train_step

from conftest import TINY


def _state(seed=0):
    return create_state(TINY, TrainConfig(batch_size=2, seed=seed, iterations=4))


def _train(state, data, n):
    for _ in range(n):
        train_step(state, sample_batch(data, state.config.batch_size, state.config.p_same, state.rng))


def _params(state):
    return {k: v.clone() for k, v in state.models.state_dict().items()}


def test_round_trip_is_bitwise(tmp_path, faces32):
    st = _state()
    _train(st, faces32, 2)
    path = tmp_path / "a.lswp"
    save_checkpoint(st, path)
    loaded = load_checkpoint(path)
    a, b = _params(st), _params(loaded)
    assert all(torch.equal(a[k], b[k]) for k in a)
    assert loaded.iteration == st.iteration == 2
    assert state_to_bytes(loaded) == path.read_bytes()


def test_resume_matches_uninterrupted(faces32):
    full = _state()
    _train(full, faces32, 3)
    part = _state()
    _train(part, faces32, 1)
    resumed = state_from_bytes(state_to_bytes(part))
    _train(resumed, faces32, 2)
    a, b = _params(full), _params(resumed)
    assert all(torch.equal(a[k], b[k]) for k in a)


def test_layout_header(faces32):
    data = state_to_bytes(_state())
    assert data[:8] == MAGIC
    (n,) = struct.unpack("<Q", data[8:16])
    manifest = json.loads(data[16:16 + n])
    assert manifest["format_version"] == FORMAT_VERSION
    assert list(manifest) == sorted(manifest)
    assert manifest["model_config"]["resolution"] == TINY.resolution


def test_tensor_names():
    st = _state()
    data = state_to_bytes(st)
    for prefix in ("gen/", "inv/", "lenc/", "tenc/", "dec/", "disc/"):
        assert prefix.encode() in data


@pytest.mark.parametrize("mutate,match", [
    (lambda d: b"XXXXXXXX" + d[8:], "magic"),
    (lambda d: d[:-3], "truncated"),
    (lambda d: d + b"\0", "trailing"),
    (lambda d: d[:20], "truncated|manifest"),
])
def test_corruption_detected(mutate, match):
    data = state_to_bytes(_state())
    with pytest.raises(CorruptCheckpointError, match=match):
        state_from_bytes(mutate(data))


def _rewrite(data, manifest_fn=None, tensor_fn=None):
    (n,) = struct.unpack("<Q", data[8:16])
    manifest = json.loads(data[16:16 + n])
    rest = data[16 + n:]
    if manifest_fn:
        manifest_fn(manifest)
    body = rest
    if tensor_fn:
        body = tensor_fn(rest)
    m = json.dumps(manifest, sort_keys=True).encode()
    return MAGIC + struct.pack("<Q", len(m)) + m + body


def test_version_mismatch():
    data = _rewrite(state_to_bytes(_state()), manifest_fn=lambda m: m.update(format_version=99))
    with pytest.raises(CorruptCheckpointError, match="version"):
        state_from_bytes(data)


def _append_tensor(body, name, arr):
    (count,) = struct.unpack("<I", body[:4])
    raw = name.encode()
    extra = struct.pack("<I", len(raw)) + raw + struct.pack("<I", arr.ndim)
    extra += b"".join(struct.pack("<Q", d) for d in arr.shape)
    payload = arr.astype("<f4").tobytes()
    extra += struct.pack("<Q", len(payload)) + payload
    return struct.pack("<I", count + 1) + body[4:] + extra


def test_unknown_tensor_rejected():
    data = _rewrite(state_to_bytes(_state()), tensor_fn=lambda b: _append_tensor(b, "zzz/extra", np.zeros(2)))
    with pytest.raises(CorruptCheckpointError, match="unknown"):
        state_from_bytes(data)


def test_config_mismatch_detected():
    # a checkpoint whose manifest claims a different latent width no longer matches its tensors
    data = _rewrite(state_to_bytes(_state()), manifest_fn=lambda m: m["model_config"].update(latent_width=12))
    with pytest.raises(CorruptCheckpointError, match="shape"):
        state_from_bytes(data)


def test_atomic_write_leaves_no_tmp(tmp_path):
    path = tmp_path / "c.lswp"
    save_checkpoint(_state(), path)
    assert path.exists() and not (tmp_path / "c.lswp.tmp").exists()
