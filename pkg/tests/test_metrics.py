import math

import numpy as np
import pytest
import scipy.linalg
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from latentswap.errors import (
    DegenerateEmbeddingError,
    InsufficientSamplesError,
    InvalidArgumentError,
    NumericalInstabilityError,
    ShapeError,
)
from latentswap.metrics import (
    GaussianStats,
    attribute_error,
    cosine_similarity,
    fid,
    frechet_distance,
    gaussian_stats,
    id_retrieval_rate,
    psnr,
)


def _sqrtm_oracle(A, B):
    # independent formula via scipy's general matrix square root
    covmean = scipy.linalg.sqrtm(A.cov @ B.cov).real
    d = A.mean - B.mean
    return float(d @ d + np.trace(A.cov + B.cov - 2 * covmean))


def test_retrieval_orthogonal():
    e = np.eye(4)
    assert id_retrieval_rate(e, e, range(4)) == 1.0


def test_retrieval_one_error():
    e = np.eye(3)
    assert id_retrieval_rate([e[0], e[1], e[0]], e, [0, 1, 2]) == 2 / 3


def test_retrieval_ties_fail():
    gallery = np.array([[1.0, 0.0], [1.0, 0.0]])
    assert id_retrieval_rate([np.array([1.0, 0.0])], gallery, [0]) == 0.0


def test_retrieval_errors():
    with pytest.raises(InvalidArgumentError):
        id_retrieval_rate([], np.eye(2), [])
    with pytest.raises(InvalidArgumentError):
        id_retrieval_rate(np.eye(2), np.eye(2), [0])
    with pytest.raises(DegenerateEmbeddingError):
        id_retrieval_rate([np.zeros(2)], np.eye(2), [0])


def test_cosine():
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert math.isclose(cosine_similarity([1, 0], [1, 1]), 1 / math.sqrt(2))
    with pytest.raises(DegenerateEmbeddingError):
        cosine_similarity([0, 0], [1, 0])


def test_attribute_error_345():
    assert attribute_error([np.array([3.0, 4.0])], [np.zeros(2)], lambda v: v) == 5.0
    assert attribute_error([np.ones(2), np.array([4.0, 5.0])], [np.ones(2), np.ones(2)], lambda v: v) == 2.5
    with pytest.raises(InvalidArgumentError):
        attribute_error([np.ones(2)], [], lambda v: v)


def test_frechet_analytic_cases():
    a = GaussianStats(np.zeros(2), np.eye(2))
    b = GaussianStats(np.array([3.0, 4.0]), np.eye(2))
    assert abs(frechet_distance(a, b) - 25.0) <= 1e-6
    c, d = GaussianStats([0.0], [[4.0]]), GaussianStats([0.0], [[1.0]])
    assert abs(frechet_distance(c, d) - 1.0) <= 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_frechet_properties(seed, dim):
    rng = np.random.default_rng(seed)
    A = gaussian_stats(rng.normal(size=(40, dim)))
    B = gaussian_stats(rng.normal(1.0, 2.0, size=(40, dim)) @ rng.normal(size=(dim, dim)))
    assert frechet_distance(A, A) <= 1e-6
    ab, ba = frechet_distance(A, B), frechet_distance(B, A)
    assert ab >= 0
    assert math.isclose(ab, ba, rel_tol=1e-8)
    assert math.isclose(ab, _sqrtm_oracle(A, B), rel_tol=1e-6, abs_tol=1e-8)


def test_frechet_singular_covariance():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(3, 8))  # fewer samples than dimensions
    A = gaussian_stats(X)
    assert frechet_distance(A, A) <= 1e-6


def test_frechet_rejects_indefinite():
    bad = GaussianStats(np.zeros(2), np.array([[1.0, 0.0], [0.0, -1.0]]))
    with pytest.raises(NumericalInstabilityError):
        frechet_distance(bad, bad)


def test_frechet_dim_mismatch():
    with pytest.raises(ShapeError):
        frechet_distance(GaussianStats(np.zeros(2), np.eye(2)), GaussianStats(np.zeros(3), np.eye(3)))


def test_gaussian_stats_unbiased():
    X = np.array([[0.0], [2.0]])
    s = gaussian_stats(X)
    assert s.mean.tolist() == [1.0] and s.cov.tolist() == [[2.0]]
    with pytest.raises(InsufficientSamplesError):
        gaussian_stats(np.zeros((1, 3)))


def test_fid_self_zero(providers, faces64):
    images = [f.image for f in faces64]
    assert fid(images, images, providers.identity_embedder) <= 1e-6


def test_psnr():
    x = torch.zeros(3, 4, 4)
    assert psnr(x, x) == float("inf")
    assert math.isclose(psnr(x, x + 0.2), 10 * math.log10(4 / 0.04), rel_tol=1e-6)
