"""Evaluation metrics: identity similarity/retrieval, attribute error and FID."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import (
    DegenerateEmbeddingError,
    InsufficientSamplesError,
    InvalidArgumentError,
    NumericalInstabilityError,
    ShapeError,
)

__all__ = [
    "GaussianStats",
    "cosine_similarity",
    "id_retrieval_rate",
    "attribute_error",
    "gaussian_stats",
    "frechet_distance",
    "fid",
    "psnr",
]

# Eigenvalues in [-EIG_TOL, 0) are rounding noise and get clamped to zero.
EIG_TOL = 1e-8


def _np(v):
    if isinstance(v, torch.Tensor):
        v = v.detach().cpu().to(torch.float64).numpy()
    return np.asarray(v, dtype=np.float64)


def cosine_similarity(a, b):
    a, b = _np(a).ravel(), _np(b).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegenerateEmbeddingError("cosine similarity of a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def id_retrieval_rate(swapped_embeds, source_embeds, source_labels):
    """Fraction of swapped embeddings whose most similar source is the true one.

    Parameters
    ----------
    swapped_embeds : sequence of vectors
        One embedding per swapped face (the queries).
    source_embeds : sequence of vectors
        Gallery of source-face embeddings.
    source_labels : sequence of int
        For each query, the gallery index of its true source.

    Ties for the maximum cosine similarity count as failures.
    """
    queries = [_np(q).ravel() for q in swapped_embeds]
    gallery = [_np(g).ravel() for g in source_embeds]
    labels = list(source_labels)
    if not queries or not gallery:
        raise InvalidArgumentError("id_retrieval_rate needs non-empty query and gallery lists")
    if len(labels) != len(queries):
        raise InvalidArgumentError("one true source label is required per swapped embedding")
    G = np.stack(gallery)
    gnorm = np.linalg.norm(G, axis=1)
    if (gnorm == 0).any():
        raise DegenerateEmbeddingError("zero vector in gallery")
    G = G / gnorm[:, None]
    hits = 0
    for q, label in zip(queries, labels):
        n = np.linalg.norm(q)
        if n == 0:
            raise DegenerateEmbeddingError("zero vector among swapped embeddings")
        sims = G @ (q / n)
        best = sims.max()
        winners = np.flatnonzero(sims == best)
        hits += int(len(winners) == 1 and winners[0] == label)
    return hits / len(queries)


def attribute_error(swapped, targets, estimate):
    """Mean Euclidean distance between estimated features of paired images."""
    swapped, targets = list(swapped), list(targets)
    if len(swapped) != len(targets) or not swapped:
        raise InvalidArgumentError("attribute_error needs equal-length, non-empty lists")
    dists = [np.linalg.norm(_np(estimate(y)).ravel() - _np(estimate(x)).ravel()) for y, x in zip(swapped, targets)]
    return float(np.mean(dists))


@dataclass(frozen=True, eq=False)
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).ravel()
        cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        if cov.shape != (mean.size, mean.size):
            raise ShapeError(f"covariance shape {cov.shape} does not match mean length {mean.size}")
        if not (np.isfinite(mean).all() and np.isfinite(cov).all()):
            raise ValueError("Gaussian statistics must be finite")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-9):
            raise ValueError("covariance must be symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self):
        return self.mean.size


def gaussian_stats(features):
    """Sample mean and unbiased (n - 1) covariance, symmetrised."""
    X = np.stack([_np(f).ravel() for f in features]) if not isinstance(features, np.ndarray) else features
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InsufficientSamplesError(f"need at least 2 feature vectors, got {X.shape[0] if X.ndim else 0}")
    mu = X.mean(axis=0)
    centered = X - mu
    cov = centered.T @ centered / (X.shape[0] - 1)
    cov = 0.5 * (cov + cov.T)
    return GaussianStats(mu, cov)


def _psd_eigvals(matrix, what):
    vals, vecs = np.linalg.eigh(matrix)
    if vals.min(initial=0.0) < -EIG_TOL:
        raise NumericalInstabilityError(f"{what} has eigenvalue {vals.min():.3e} below -{EIG_TOL:g}")
    return np.clip(vals, 0.0, None), vecs


def frechet_distance(A, B):
    """Squared Wasserstein-2 distance between two Gaussians.

    ``|mu_A - mu_B|^2 + Tr(S_A + S_B - 2 (S_A S_B)^(1/2))``. The trace of the
    product square root is taken from the eigenvalues of the symmetric
    matrix ``S_A^(1/2) S_B S_A^(1/2)``, which shares them with ``S_A S_B``.
    """
    if A.dim != B.dim:
        raise ShapeError(f"dimension mismatch: {A.dim} vs {B.dim}")
    vals, vecs = _psd_eigvals(A.cov, "first covariance")
    sqrt_a = (vecs * np.sqrt(vals)) @ vecs.T
    inner = sqrt_a @ B.cov @ sqrt_a
    inner = 0.5 * (inner + inner.T)
    inner_vals, _ = _psd_eigvals(inner, "covariance product")
    diff = A.mean - B.mean
    value = diff @ diff + np.trace(A.cov) + np.trace(B.cov) - 2.0 * np.sqrt(inner_vals).sum()
    return float(max(value, 0.0))


def fid(images_a, images_b, extractor):
    """Frechet distance between Gaussian fits of extracted features."""
    feats_a = [_np(extractor(x)).ravel() for x in images_a]
    feats_b = [_np(extractor(x)).ravel() for x in images_b]
    return frechet_distance(gaussian_stats(feats_a), gaussian_stats(feats_b))


def psnr(x, y, data_range=2.0):
    """Peak signal-to-noise ratio in dB; images in ``[-1, 1]`` by default."""
    err = float(np.mean((_np(x) - _np(y)) ** 2))
    if err == 0:
        return float("inf")
    return 10.0 * np.log10(data_range ** 2 / err)
