import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from meaad.embedding import ExpertIndex, GalleryItem, QuerySample, cosine_similarity, normalize
from meaad.errors import DataError, DimensionMismatch, NonFinite, ZeroVector

from conftest import random_unit


def test_normalize_examples():
    np.testing.assert_array_equal(normalize([3, 4]), [0.6, 0.8])
    np.testing.assert_array_equal(normalize([0, 0, 1]), [0.0, 0.0, 1.0])
    # 1/sqrt(2) rounded to float64
    np.testing.assert_array_equal(normalize([1, 1]), [0.7071067811865475, 0.7071067811865475])


@pytest.mark.parametrize("v", [[0.0, 0.0], [1e-13, 0.0]])
def test_normalize_zero(v):
    with pytest.raises(ZeroVector):
        normalize(v)


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_normalize_nonfinite(bad):
    with pytest.raises(NonFinite):
        normalize([1.0, bad])


def test_cosine_examples():
    assert cosine_similarity([1, 0], [1, 0]) == 1.0
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity([0.6, 0.8], [0.8, 0.6]) == pytest.approx(0.96, abs=1e-15)


def test_cosine_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        cosine_similarity([1, 0], [1, 0, 0])


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@given(arrays(np.float64, st.integers(2, 32), elements=finite), st.floats(1e-3, 1e3))
def test_scale_invariance(v, c):
    if np.linalg.norm(v) < 1e-6:
        return
    np.testing.assert_allclose(normalize(c * v), normalize(v), rtol=0, atol=1e-12)


@given(st.integers(2, 64), st.integers(0, 2**32 - 1))
def test_norm_and_symmetry(d, seed):
    rng = np.random.default_rng(seed)
    a, b = normalize(rng.standard_normal(d)), normalize(rng.standard_normal(d))
    assert abs(np.linalg.norm(a) - 1) <= 1e-9
    assert cosine_similarity(a, b) == cosine_similarity(b, a)


def test_range_on_random_pairs(rng):
    a = random_unit(rng, 10_000, 8)
    b = random_unit(rng, 10_000, 8)
    sims = [cosine_similarity(x, y) for x, y in zip(a, b)]
    assert min(sims) >= -1.0 and max(sims) <= 1.0
    # antiparallel and parallel rounding cases stay clamped
    assert cosine_similarity(a[0], a[0]) <= 1.0
    assert cosine_similarity(a[0], -a[0]) >= -1.0


def test_expert_index_from_items_normalizes():
    idx = ExpertIndex.from_items(0, [GalleryItem(5, 1, [3.0, 4.0]), GalleryItem(2, 0, [0.0, 2.0])])
    np.testing.assert_array_equal(idx.embedding(5), [0.6, 0.8])
    assert idx.dimension == 2 and len(idx) == 2
    assert not idx.embeddings.flags.writeable


def test_expert_index_rejects_bad_input():
    with pytest.raises(DataError):
        ExpertIndex(0, [1, 1], [0, 0], np.eye(2))
    with pytest.raises(DataError):
        ExpertIndex(0, [0, 1], [0, 0], np.array([[1.0, 0.0], [0.5, 0.5]]))
    with pytest.raises(DimensionMismatch):
        ExpertIndex(0, [0], [0], np.array([[1.0]]))


def test_query_sample_validation():
    q = QuerySample(1, np.eye(2), 3, "benign")
    assert q.n_experts == 2 and q.dimension == 2
    with pytest.raises(DataError):
        QuerySample(1, np.eye(2), 3, "suspicious")
    with pytest.raises(DataError):
        QuerySample(1, 2 * np.eye(2))
