"""INI configuration with sections ``[model]``, ``[train]``, ``[providers]`` and ``[video]``.

Every key has a default; unknown sections or keys are errors. Example::

    [model]
    resolution = 64
    latent_width = 32
    channel_scale = 0.03125

    [train]
    iterations = 200
    batch_size = 4
    lambda_adv = 1.0

    [providers]
    identity = toy

    [video]
    mode = temporal
"""

from __future__ import annotations

import configparser
import typing
from dataclasses import dataclass, field, fields, replace

from .errors import InvalidConfigurationError
from .losses import LossWeights
from .nets import GeneratorConfig
from .pipeline import TrainConfig
from .video import VideoOptions

__all__ = ["RunConfig", "load_config", "parse_config", "TOY_MODEL", "TOY_TRAIN"]

PROVIDER_KINDS = ("identity", "landmarks", "perceptual", "flow", "pose", "expression")

# Desk-scale defaults used by the CLI and the estimator.
TOY_MODEL = GeneratorConfig(
    resolution=64, latent_width=32, channel_scale=1 / 32, heatmap_grid=32, heatmap_sigma=1.0
)
# R1 keeps the small discriminator from overpowering the reconstruction terms.
TOY_TRAIN = TrainConfig(batch_size=4, iterations=1000, pretrain_steps=300, r1_gamma=50.0)

_WEIGHT_KEYS = {f"lambda_{name}": name for name in ("adv", "id", "lmk", "rec", "st")}


@dataclass(frozen=True)
class RunConfig:
    model: GeneratorConfig = TOY_MODEL
    train: TrainConfig = TOY_TRAIN
    providers: dict = field(default_factory=dict)
    video: VideoOptions = VideoOptions()


def _coerce(raw, annotation, key):
    target = annotation
    origin = typing.get_origin(annotation)
    if origin is typing.Union:
        args = [a for a in typing.get_args(annotation) if a is not type(None)]
        if raw.strip().lower() in ("", "none"):
            return None
        target = args[0]
    try:
        if target is bool:
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if target is int:
            return int(raw)
        if target is float:
            return float(raw)
        return raw.strip()
    except ValueError:
        raise InvalidConfigurationError(f"key {key!r}: cannot parse {raw!r} as {getattr(target, '__name__', target)}")


def _section_values(parser, section, cls, skip=()):
    hints = typing.get_type_hints(cls)
    allowed = {f.name for f in fields(cls)} - set(skip)
    values = {}
    if not parser.has_section(section):
        return values
    for key, raw in parser.items(section):
        if key not in allowed:
            continue
        values[key] = _coerce(raw, hints[key], f"{section}.{key}")
    return values


def parse_config(text, base=None):
    """Parse INI text into a :class:`RunConfig`, starting from ``base`` (toy defaults)."""
    base = base or RunConfig()
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise InvalidConfigurationError(f"malformed config: {exc}") from exc

    known_sections = {"model", "train", "providers", "video"}
    unknown = set(parser.sections()) - known_sections
    if unknown:
        raise InvalidConfigurationError(f"unknown config section(s): {sorted(unknown)}")

    allowed = {
        "model": {f.name for f in fields(GeneratorConfig)},
        "train": ({f.name for f in fields(TrainConfig)} - {"weights"}) | set(_WEIGHT_KEYS),
        "providers": set(PROVIDER_KINDS),
        "video": {f.name for f in fields(VideoOptions)},
    }
    for section in parser.sections():
        bad = [k for k in parser[section] if k not in allowed[section]]
        if bad:
            raise InvalidConfigurationError(f"unknown key(s) in [{section}]: {sorted(bad)}")

    try:
        model = replace(base.model, **_section_values(parser, "model", GeneratorConfig))
        train_vals = _section_values(parser, "train", TrainConfig, skip=("weights",))
        weights = dict(base.train.weights.as_dict())
        if parser.has_section("train"):
            for key, name in _WEIGHT_KEYS.items():
                if key in parser["train"]:
                    weights[name] = _coerce(parser["train"][key], float, f"train.{key}")
        train = replace(base.train, weights=LossWeights(**weights), **train_vals)
        video = replace(base.video, **_section_values(parser, "video", VideoOptions))
    except TypeError as exc:
        raise InvalidConfigurationError(str(exc)) from exc
    providers = dict(base.providers)
    if parser.has_section("providers"):
        providers.update({k: v.strip() for k, v in parser.items("providers")})
    return RunConfig(model=model, train=train, providers=providers, video=video)


def load_config(path, base=None):
    with open(path) as fh:
        return parse_config(fh.read(), base=base)
