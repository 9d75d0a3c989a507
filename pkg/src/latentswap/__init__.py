"""Latent-space face swapping with feature-level background transfer.

The public surface is re-exported here; see :class:`FaceSwapper` for the
estimator front end and :mod:`latentswap.cli` for the command line.
"""

from .errors import (
    ContractViolationError,
    CorruptCheckpointError,
    DegenerateEmbeddingError,
    InsufficientSamplesError,
    InvalidArgumentError,
    InvalidConfigurationError,
    LatentSwapError,
    NumericalInstabilityError,
    PoisonedLossError,
    ShapeError,
    StageError,
)
from .latent import (
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
from .nets import GeneratorConfig, LandmarkSet, SwapModels, num_latent_vectors, channel_width
from .losses import LossWeights
from .pipeline import FaceSample, SwapOptions, SwapResult, TrainConfig, swap_image
from .video import FrameSequence, VideoOptions, swap_video
from .estimator import FaceSwapper, SwapPair

__all__ = [
    "ContractViolationError",
    "CorruptCheckpointError",
    "DegenerateEmbeddingError",
    "InsufficientSamplesError",
    "InvalidArgumentError",
    "InvalidConfigurationError",
    "LatentSwapError",
    "NumericalInstabilityError",
    "PoisonedLossError",
    "ShapeError",
    "StageError",
    "AppearanceCode",
    "LatentCode",
    "StructureCode",
    "TransferDirection",
    "apply_transfer_direction",
    "compose_swap_code",
    "merge_code",
    "split_code",
    "structure_split_index",
    "GeneratorConfig",
    "LandmarkSet",
    "SwapModels",
    "num_latent_vectors",
    "channel_width",
    "LossWeights",
    "FaceSample",
    "SwapOptions",
    "SwapResult",
    "TrainConfig",
    "swap_image",
    "FrameSequence",
    "VideoOptions",
    "swap_video",
    "FaceSwapper",
    "SwapPair",
]

__version__ = "0.1.0"
