"""Context features: query-support, support-support and cross-expert affinity.

Flat layout is ``[qs expert 0..N-1] ++ [ss expert 0..N-1] ++ [ce row 0..N-1]``.
The ss block is absent when K == 1 and the ce block when N == 1.
"""

from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from . import kernels
from .embedding import BENIGN, ADVERSARIAL, ExpertIndex, QuerySample, check_compatible
from .errors import (
    DataError,
    DimensionMismatch,
    EmptyInput,
    InvalidConfig,
    MismatchedSupportSizes,
    SingleExpert,
)
from .retrieval import SupportSet, retrieve_batch, retrieve_top_k

BLOCKS = ("qs", "ss", "ce")


def pair_count(k: int) -> int:
    return k * (k - 1) // 2


def feature_dim(n_experts: int, k: int) -> int:
    return sum(s.stop - s.start for s in feature_layout(n_experts, k).values())


def feature_layout(n_experts: int, k: int) -> Dict[str, slice]:
    """Contiguous slice of each present block inside the flat feature."""
    if n_experts < 1 or k < 1:
        raise InvalidConfig(f"need N >= 1 and K >= 1, got N={n_experts}, K={k}")
    sizes = {"qs": n_experts * k, "ss": n_experts * pair_count(k), "ce": n_experts * k if n_experts > 1 else 0}
    layout, start = {}, 0
    for name in BLOCKS:
        if sizes[name]:
            layout[name] = slice(start, start + sizes[name])
            start += sizes[name]
    return layout


def select_blocks(x: np.ndarray, n_experts: int, k: int, blocks: Sequence[str]) -> np.ndarray:
    """Column slice of a feature matrix keeping only ``blocks`` (in canonical order)."""
    layout = feature_layout(n_experts, k)
    unknown = set(blocks) - set(BLOCKS)
    if unknown:
        raise InvalidConfig(f"unknown feature blocks {sorted(unknown)}")
    cols = [np.arange(layout[b].start, layout[b].stop) for b in BLOCKS if b in blocks and b in layout]
    if not cols:
        raise InvalidConfig(f"feature subset {list(blocks)} is empty for N={n_experts}, K={k}")
    return x[..., np.concatenate(cols)]


@dataclass(frozen=True, eq=False)
class ContextFeature:
    n_experts: int
    support_size: int
    qs_block: np.ndarray
    ss_block: np.ndarray
    ce_block: np.ndarray

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([self.qs_block, self.ss_block, self.ce_block])

    @property
    def dim(self) -> int:
        return self.qs_block.size + self.ss_block.size + self.ce_block.size


def query_support_affinity(query_embedding, support: SupportSet) -> np.ndarray:
    q = np.asarray(query_embedding, dtype=np.float64)
    if q.shape != (support.embeddings.shape[1],):
        raise DimensionMismatch(f"query shape {q.shape} vs support dimension {support.embeddings.shape[1]}")
    return np.clip(support.embeddings @ q, -1.0, 1.0)


def support_support_affinity(support: SupportSet) -> np.ndarray:
    """Strict upper triangle (row-major, i < j) of the support cosine matrix."""
    emb = np.asarray(support.embeddings, dtype=np.float64)
    if emb.ndim != 2:
        raise DimensionMismatch("support embeddings must be K x D")
    gram = np.clip(emb @ emb.T, -1.0, 1.0)
    iu = np.triu_indices(emb.shape[0], k=1)
    return gram[iu]


def cross_expert_affinity(supports: Sequence[SupportSet]) -> np.ndarray:
    """N x K matrix: share of the other experts whose support holds item (i, j)."""
    n = len(supports)
    if n < 2:
        raise SingleExpert("cross-expert affinity needs at least two experts")
    k = supports[0].k
    if any(s.k != k for s in supports):
        raise MismatchedSupportSizes(f"support sizes differ: {[s.k for s in supports]}")
    ids = np.stack([s.item_ids for s in supports])[None]
    return kernels.membership_counts(ids)[0] / (n - 1)


def assemble_context_feature(
    query: QuerySample, indexes: Sequence[ExpertIndex], k: int
) -> ContextFeature:
    check_compatible(query, indexes)
    n = len(indexes)
    supports = [
        retrieve_top_k(idx, query.embeddings[e], k, query.exclude_ids, query.query_id)
        for e, idx in enumerate(indexes)
    ]
    qs = np.concatenate([query_support_affinity(query.embeddings[e], s) for e, s in enumerate(supports)])
    ss = np.concatenate([support_support_affinity(s) for s in supports])
    ce = cross_expert_affinity(supports).ravel() if n > 1 else np.empty(0)
    return ContextFeature(n, k, qs, ss, ce)


def label_value(label: str) -> int:
    if label == BENIGN:
        return 0
    if label == ADVERSARIAL:
        return 1
    raise DataError(f"query label {label!r} is neither benign nor adversarial")


@dataclass(frozen=True, eq=False)
class FeatureBatch:
    """Features for many queries plus the retrieval byproducts reused downstream."""

    n_experts: int
    support_size: int
    query_ids: np.ndarray
    labels: np.ndarray  # 0 benign, 1 adversarial, -1 unknown
    support_ids: np.ndarray  # (Q, N, K)
    qs: np.ndarray  # (Q, N, K)
    ss: np.ndarray  # (Q, N, K')
    ce: np.ndarray  # (Q, N, K) or (Q, 0, K) when N == 1

    @property
    def matrix(self) -> np.ndarray:
        q = self.query_ids.shape[0]
        parts = [self.qs.reshape(q, -1), self.ss.reshape(q, -1), self.ce.reshape(q, -1)]
        return np.concatenate(parts, axis=1)

    @property
    def dim(self) -> int:
        return feature_dim(self.n_experts, self.support_size)

    def common_counts(self) -> np.ndarray:
        if self.n_experts < 2:
            raise SingleExpert("common support count needs at least two experts")
        return kernels.common_counts(self.support_ids)


def featurize(queries: Sequence[QuerySample], indexes: Sequence[ExpertIndex], k: int) -> FeatureBatch:
    """Batched equivalent of :func:`assemble_context_feature`."""
    queries = list(queries)
    if not queries:
        raise EmptyInput("no queries to featurize")
    for q in queries:
        check_compatible(q, indexes)
    n = len(indexes)
    nq = len(queries)
    pairs = pair_count(k)
    iu = np.triu_indices(k, k=1)
    exclude = [q.exclude_ids for q in queries] if any(q.exclude_ids for q in queries) else None
    support_ids = np.empty((nq, n, k), dtype=np.int64)
    qs = np.empty((nq, n, k))
    ss = np.empty((nq, n, pairs))
    for e, idx in enumerate(indexes):
        emb = np.stack([q.embeddings[e] for q in queries])
        cols, sims = retrieve_batch(idx, emb, k, exclude)
        support_ids[:, e] = idx.item_ids[cols]
        qs[:, e] = sims
        sup = idx.embeddings[cols]  # (Q, K, D)
        gram = np.clip(np.matmul(sup, sup.transpose(0, 2, 1)), -1.0, 1.0)
        ss[:, e] = gram[:, iu[0], iu[1]]
    if n > 1:
        ce = kernels.membership_counts(support_ids) / (n - 1)
    else:
        ce = np.empty((nq, 0, k))
    labels = np.array(
        [label_value(q.label) if q.label in (BENIGN, ADVERSARIAL) else -1 for q in queries],
        dtype=np.int64,
    )
    return FeatureBatch(
        n, k, np.array([q.query_id for q in queries], dtype=np.int64), labels, support_ids, qs, ss, ce
    )


def features_matrix(queries: Sequence[QuerySample], indexes: Sequence[ExpertIndex], k: int) -> np.ndarray:
    return featurize(queries, indexes, k).matrix


def subset_experts(queries: List[QuerySample], indexes: Sequence[ExpertIndex], experts: Sequence[int]):
    """Restrict queries and indexes to the given expert channels (in that order)."""
    experts = list(experts)
    if not experts:
        raise InvalidConfig("expert subset is empty")
    sub_idx = [indexes[e] for e in experts]
    sub_q = [q.with_embeddings(q.embeddings[experts]) for q in queries]
    return sub_q, sub_idx
