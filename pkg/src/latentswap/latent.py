"""Extended latent codes and their structure/appearance algebra.

A code is a stack of ``L`` latent vectors of width ``D``, one per modulated
generator layer. The first ``K`` rows drive the shallow layers (pose,
expression, face shape); the remaining rows drive the deep layers (lighting,
colour, skin tone). Codes may carry leading batch dimensions: rows always
live on axis ``-2`` and width on axis ``-1``.

All functions return new values and never modify their inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .errors import InvalidConfigurationError, ShapeError

__all__ = [
    "LatentCode",
    "StructureCode",
    "AppearanceCode",
    "TransferDirection",
    "structure_split_index",
    "split_code",
    "merge_code",
    "apply_transfer_direction",
    "compose_swap_code",
]

# Structure rows at the 1024px reference layout (18 rows).
_REF_STRUCTURE_ROWS = 7
_REF_NUM_ROWS = 18


def _check_matrix(vectors, name):
    if not isinstance(vectors, torch.Tensor):
        raise TypeError(f"{name} must be a torch.Tensor, got {type(vectors).__name__}")
    if vectors.ndim < 2:
        raise ShapeError(f"{name} must have at least 2 dims (rows, width), got {tuple(vectors.shape)}")
    if vectors.shape[-1] < 1:
        raise ShapeError(f"{name} must have width >= 1")
    if not torch.isfinite(vectors.detach()).all():
        raise ValueError(f"{name} contains non-finite entries")


@dataclass(frozen=True, eq=False)
class StructureCode:
    """The first ``K`` rows of a latent code."""

    vectors: torch.Tensor

    def __post_init__(self):
        _check_matrix(self.vectors, "StructureCode.vectors")

    @property
    def num_rows(self):
        return self.vectors.shape[-2]


@dataclass(frozen=True, eq=False)
class AppearanceCode:
    """The trailing ``L - K`` rows of a latent code."""

    vectors: torch.Tensor

    def __post_init__(self):
        _check_matrix(self.vectors, "AppearanceCode.vectors")

    @property
    def num_rows(self):
        return self.vectors.shape[-2]


@dataclass(frozen=True, eq=False)
class TransferDirection:
    """Additive offset applied to a structure code."""

    vectors: torch.Tensor

    def __post_init__(self):
        _check_matrix(self.vectors, "TransferDirection.vectors")


@dataclass(frozen=True, eq=False)
class LatentCode:
    """Stack of ``L`` latent vectors with a structure/appearance split index."""

    vectors: torch.Tensor
    split_index: int

    def __post_init__(self):
        _check_matrix(self.vectors, "LatentCode.vectors")
        num_rows = self.vectors.shape[-2]
        if num_rows < 2:
            raise ShapeError(f"a latent code needs at least 2 rows, got {num_rows}")
        if not 1 <= self.split_index <= num_rows - 1:
            raise InvalidConfigurationError(
                f"split_index must lie in [1, {num_rows - 1}], got {self.split_index}"
            )

    @property
    def num_rows(self):
        return self.vectors.shape[-2]

    @property
    def width(self):
        return self.vectors.shape[-1]

    def equal(self, other):
        """Bitwise equality of vectors and split index."""
        return (
            self.split_index == other.split_index
            and self.vectors.shape == other.vectors.shape
            and torch.equal(self.vectors, other.vectors)
        )


def structure_split_index(num_vectors):
    """Number of structure rows for a code with ``num_vectors`` rows.

    Scales the 7-of-18 reference split proportionally, rounding half away
    from zero, then clamps to ``[1, num_vectors - 1]``.

    >>> structure_split_index(18)
    7
    >>> structure_split_index(10)
    4
    """
    if int(num_vectors) != num_vectors or num_vectors < 2:
        raise InvalidConfigurationError(f"num_vectors must be an integer >= 2, got {num_vectors}")
    num_vectors = int(num_vectors)
    k = math.floor(_REF_STRUCTURE_ROWS * num_vectors / _REF_NUM_ROWS + 0.5)
    return min(max(k, 1), num_vectors - 1)


def split_code(w):
    """Split ``w`` into its structure rows ``[0, K)`` and appearance rows ``[K, L)``."""
    k = w.split_index
    return StructureCode(w.vectors[..., :k, :]), AppearanceCode(w.vectors[..., k:, :])


def _concat(g, h):
    if g.shape[-1] != h.shape[-1]:
        raise ShapeError(f"width mismatch: structure has D={g.shape[-1]}, appearance has D={h.shape[-1]}")
    if g.shape[:-2] != h.shape[:-2]:
        raise ShapeError(f"batch shape mismatch: {tuple(g.shape[:-2])} vs {tuple(h.shape[:-2])}")
    return LatentCode(torch.cat([g, h], dim=-2), split_index=g.shape[-2])


def merge_code(g, h):
    """Row-wise concatenation, structure first."""
    return _concat(g.vectors, h.vectors)


def apply_transfer_direction(g_s, n):
    """Edited structure code ``g_s + n``."""
    if g_s.vectors.shape != n.vectors.shape:
        raise ShapeError(
            f"direction shape {tuple(n.vectors.shape)} does not match structure {tuple(g_s.vectors.shape)}"
        )
    return StructureCode(g_s.vectors + n.vectors)


def compose_swap_code(g_hat, h_t):
    """Swap code whose structure block is ``g_hat`` and appearance block is ``h_t``."""
    return _concat(g_hat.vectors, h_t.vectors)
