"""Exact top-K cosine retrieval over an expert gallery."""

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from . import kernels
from .embedding import ExpertIndex
from .errors import DimensionMismatch, InsufficientGallery, InvalidConfig

DEFAULT_K = 15


class SupportEntry(NamedTuple):
    rank: int
    item_id: int
    embedding: np.ndarray
    similarity: float


@dataclass(frozen=True, eq=False)
class SupportSet:
    expert_id: int
    query_id: int
    item_ids: np.ndarray
    embeddings: np.ndarray
    similarities: np.ndarray

    @property
    def k(self) -> int:
        return self.item_ids.shape[0]

    @property
    def entries(self):
        return [
            SupportEntry(r + 1, int(self.item_ids[r]), self.embeddings[r], float(self.similarities[r]))
            for r in range(self.k)
        ]

    def id_set(self) -> frozenset:
        return frozenset(int(i) for i in self.item_ids)


def _exclusion_mask(index: ExpertIndex, exclude_ids: Iterable[int]) -> Optional[np.ndarray]:
    exclude = [index._pos[i] for i in {int(i) for i in exclude_ids} if i in index._pos]
    if not exclude:
        return None
    mask = np.zeros(len(index), dtype=bool)
    mask[exclude] = True
    return mask


def _check_k(index: ExpertIndex, k: int, n_excluded: int) -> None:
    if k < 1:
        raise InvalidConfig(f"K must be positive, got {k}")
    eligible = len(index) - n_excluded
    if k > eligible:
        raise InsufficientGallery(
            f"expert {index.expert_id}: K={k} but only {eligible} eligible gallery items"
        )


def similarities(index: ExpertIndex, query_embedding) -> np.ndarray:
    q = np.asarray(query_embedding, dtype=np.float64)
    if q.shape != (index.dimension,):
        raise DimensionMismatch(f"query shape {q.shape}, gallery dimension {index.dimension}")
    return np.clip(index.embeddings @ q, -1.0, 1.0)


def retrieve_top_k(
    index: ExpertIndex,
    query_embedding,
    k: int = DEFAULT_K,
    exclude_ids: Iterable[int] = (),
    query_id: int = -1,
) -> SupportSet:
    """Full-scan top-K retrieval, ordered by (similarity desc, item_id asc)."""
    mask = _exclusion_mask(index, exclude_ids)
    _check_k(index, k, 0 if mask is None else int(mask.sum()))
    sims = similarities(index, query_embedding)
    ranked = sims.copy()
    if mask is not None:
        ranked[mask] = -np.inf
    cols = kernels.topk_rows(ranked[None, :], index.item_ids, k)[0]
    return SupportSet(
        index.expert_id,
        query_id,
        index.item_ids[cols],
        index.embeddings[cols],
        sims[cols],
    )


def retrieve_batch(
    index: ExpertIndex,
    query_embeddings,
    k: int = DEFAULT_K,
    exclude_ids: Optional[Sequence[Iterable[int]]] = None,
):
    """Top-K for many queries at once.

    Returns ``(columns, sims)`` where ``columns`` is (Q, K) gallery row
    positions and ``sims`` the matching similarities.
    """
    q = np.asarray(query_embeddings, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != index.dimension:
        raise DimensionMismatch(f"query batch shape {q.shape}, gallery dimension {index.dimension}")
    sims = np.clip(q @ index.embeddings.T, -1.0, 1.0)
    n_excluded = 0
    if exclude_ids is not None:
        for r, ex in enumerate(exclude_ids):
            mask = _exclusion_mask(index, ex)
            if mask is not None:
                sims[r, mask] = -np.inf
                n_excluded = max(n_excluded, int(mask.sum()))
    _check_k(index, k, n_excluded)
    cols = kernels.topk_rows(sims, index.item_ids, k)
    return cols, np.take_along_axis(sims, cols, axis=1)
