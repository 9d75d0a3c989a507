"""Checkpoint container.

Layout (all integers little-endian)::

    8 bytes   magic  b"LSWPCKPT"
    u64       manifest length in bytes
    ...       manifest, UTF-8 JSON with sorted keys
    u32       tensor count
    per tensor:
      u32     name length, then the UTF-8 name
      u32     ndim, then ndim x u64 shape
      u64     payload length, then row-major float32 payload

The manifest holds the format version, model and training configuration,
provider names, the iteration counter, the batch-sampling RNG state and the
Adam step counts. Tensor names are ``<net>/<parameter path>`` for network
weights and ``optim_d/...`` / ``optim_g/...`` for Adam moments.
"""

from __future__ import annotations

import io
import json
import os
import struct

import numpy as np
import torch

from .errors import CorruptCheckpointError
from .losses import LossWeights
from .nets import GeneratorConfig
from .pipeline import TrainConfig, create_state, generator_side_parameters

__all__ = ["FORMAT_VERSION", "save_checkpoint", "load_checkpoint", "state_to_bytes", "state_from_bytes"]

MAGIC = b"LSWPCKPT"
FORMAT_VERSION = 1


def _named_tensors(state):
    tensors = {}
    for key, value in state.models.state_dict().items():
        net, _, rest = key.partition(".")
        tensors[f"{net}/{rest}"] = value
    for opt_name, opt, names in _optimizers(state):
        for pname, p in names:
            st = opt.state.get(p)
            if not st:
                continue
            tensors[f"{opt_name}/{pname}/exp_avg"] = st["exp_avg"]
            tensors[f"{opt_name}/{pname}/exp_avg_sq"] = st["exp_avg_sq"]
    return tensors


def _optimizers(state):
    gen_side = generator_side_parameters(state.models, state.config)
    disc = [(f"disc.{k}", p) for k, p in state.models.disc.named_parameters()]
    return [("optim_d", state.opt_d, disc), ("optim_g", state.opt_g, gen_side)]


def _adam_steps(state):
    steps = {}
    for opt_name, opt, names in _optimizers(state):
        for pname, p in names:
            st = opt.state.get(p)
            if st:
                steps[f"{opt_name}/{pname}"] = int(st["step"])
    return steps


def _manifest(state):
    return {
        "format_version": FORMAT_VERSION,
        "model_config": state.models.cfg.to_dict(),
        "train_config": state.config.to_dict(),
        "providers": dict(sorted(state.provider_names.items())),
        "iteration": state.iteration,
        "rng_state": state.rng.bit_generator.state,
        "adam_steps": _adam_steps(state),
    }


def state_to_bytes(state):
    buf = io.BytesIO()
    manifest = json.dumps(_manifest(state), sort_keys=True).encode("utf-8")
    buf.write(MAGIC)
    buf.write(struct.pack("<Q", len(manifest)))
    buf.write(manifest)
    tensors = _named_tensors(state)
    buf.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = tensors[name].detach().cpu().to(torch.float32).contiguous().numpy().astype("<f4", copy=False)
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<Q", dim))
        payload = arr.tobytes(order="C")
        buf.write(struct.pack("<Q", len(payload)))
        buf.write(payload)
    return buf.getvalue()


def save_checkpoint(state, path):
    """Write ``state`` to ``path`` atomically."""
    data = state_to_bytes(state)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def read(self, n):
        if n < 0 or self.pos + n > len(self.data):
            raise CorruptCheckpointError(
                f"checkpoint truncated: wanted {n} bytes at offset {self.pos}, file has {len(self.data)}"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.read(struct.calcsize(fmt)))[0]


def _parse(data):
    r = _Reader(data)
    if r.read(len(MAGIC)) != MAGIC:
        raise CorruptCheckpointError("not a checkpoint file (bad magic)")
    try:
        manifest = json.loads(r.read(r.unpack("<Q")).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"unreadable manifest: {exc}") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CorruptCheckpointError(f"unsupported checkpoint format version {version!r}; expected {FORMAT_VERSION}")
    tensors = {}
    for _ in range(r.unpack("<I")):
        name = r.read(r.unpack("<I")).decode("utf-8")
        shape = tuple(r.unpack("<Q") for _ in range(r.unpack("<I")))
        nbytes = r.unpack("<Q")
        if nbytes != 4 * int(np.prod(shape, dtype=np.int64)):
            raise CorruptCheckpointError(f"tensor {name!r}: payload length {nbytes} does not match shape {shape}")
        arr = np.frombuffer(r.read(nbytes), dtype="<f4").reshape(shape)
        tensors[name] = torch.from_numpy(arr.astype(np.float32))
    if r.pos != len(data):
        raise CorruptCheckpointError(f"{len(data) - r.pos} trailing bytes after the last tensor")
    return manifest, tensors


def state_from_bytes(data, providers=None):
    manifest, tensors = _parse(data)
    model_cfg = GeneratorConfig(**manifest["model_config"])
    tc = dict(manifest["train_config"])
    tc["weights"] = LossWeights(**tc["weights"])
    train_cfg = TrainConfig(**tc)
    state = create_state(model_cfg, train_cfg, provider_names=manifest.get("providers"), providers=providers)

    model_state = state.models.state_dict()
    expected = {f"{k.partition('.')[0]}/{k.partition('.')[2]}": k for k in model_state}
    new_state = {}
    for name, key in expected.items():
        if name not in tensors:
            raise CorruptCheckpointError(f"checkpoint is missing tensor {name!r}")
        if tuple(tensors[name].shape) != tuple(model_state[key].shape):
            raise CorruptCheckpointError(
                f"tensor {name!r} has shape {tuple(tensors[name].shape)}, expected {tuple(model_state[key].shape)}"
            )
        new_state[key] = tensors[name]
    state.models.load_state_dict(new_state)

    steps = manifest.get("adam_steps", {})
    known = set(expected)
    for opt_name, opt, names in _optimizers(state):
        for pname, p in names:
            key = f"{opt_name}/{pname}"
            if key not in steps:
                continue
            try:
                m, v = tensors[f"{key}/exp_avg"], tensors[f"{key}/exp_avg_sq"]
            except KeyError as exc:
                raise CorruptCheckpointError(f"missing Adam moment {exc.args[0]!r}") from None
            opt.state[p] = {"step": torch.tensor(float(steps[key])), "exp_avg": m.clone(), "exp_avg_sq": v.clone()}
            known.update({f"{key}/exp_avg", f"{key}/exp_avg_sq"})
    unknown = sorted(set(tensors) - known)
    if unknown:
        raise CorruptCheckpointError(f"unknown tensor name(s) in checkpoint: {unknown[:5]}")

    state.iteration = int(manifest["iteration"])
    state.rng.bit_generator.state = manifest["rng_state"]
    return state


def load_checkpoint(path, providers=None):
    with open(path, "rb") as fh:
        data = fh.read()
    return state_from_bytes(data, providers=providers)
