"""Synthetic multi-expert galleries with clustered unit-sphere embeddings.

Every identity gets a random unit base vector. An item's embedding under
expert ``e`` is ``normalize(base + item_noise + expert_jitter[e])``: the item
noise (std ``cluster_noise``) is shared by all experts, the jitter (std
``cross_expert_jitter``) is drawn per expert, which is what decorrelates the
experts' rankings.
"""

from dataclasses import asdict, dataclass
from typing import List, Tuple

import numpy as np

from .embedding import BENIGN, ExpertIndex, QuerySample, normalize_rows
from .errors import InvalidConfig


@dataclass(frozen=True)
class ScenarioConfig:
    n_identities: int = 50
    items_per_identity: int = 20
    n_experts: int = 4
    dimension: int = 128
    cluster_noise: float = 0.05
    cross_expert_jitter: float = 0.02
    queries_per_identity: int = 10
    seed: int = 0

    def validate(self, k: int = 1) -> None:
        if self.n_identities < 1 or self.items_per_identity < 1:
            raise InvalidConfig("need at least one identity and one item per identity")
        if self.n_experts < 1:
            raise InvalidConfig("need at least one expert")
        if self.dimension < 2:
            raise InvalidConfig("dimension must be at least 2")
        if self.queries_per_identity < 0:
            raise InvalidConfig("queries_per_identity must be non-negative")
        for name in ("cluster_noise", "cross_expert_jitter"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise InvalidConfig(f"{name} must be finite and >= 0")
        if self.n_identities * self.items_per_identity < k + 1:
            raise InvalidConfig(
                f"gallery of {self.n_identities * self.items_per_identity} items too small for K={k}"
            )

    def to_dict(self) -> dict:
        return asdict(self)


def _draw(rng, bases, identities, n_experts, sigma, tau):
    """Per-expert embeddings (n_experts, len(identities), D) for draws of the given identities."""
    d = bases.shape[1]
    shared = bases[identities] + sigma * rng.standard_normal((len(identities), d))
    out = np.empty((n_experts, len(identities), d))
    for e in range(n_experts):
        out[e] = normalize_rows(shared + tau * rng.standard_normal((len(identities), d)))
    return out


def generate_scenario(config: ScenarioConfig) -> Tuple[List[ExpertIndex], List[QuerySample]]:
    """Galleries for every expert plus held-out benign queries (round-robin over identities)."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    bases = normalize_rows(rng.standard_normal((config.n_identities, config.dimension)))
    n_items = config.n_identities * config.items_per_identity
    item_identity = np.repeat(np.arange(config.n_identities), config.items_per_identity)
    gallery = _draw(
        rng, bases, item_identity, config.n_experts, config.cluster_noise, config.cross_expert_jitter
    )
    item_ids = np.arange(n_items, dtype=np.int64)
    indexes = [ExpertIndex(e, item_ids, item_identity, gallery[e]) for e in range(config.n_experts)]
    query_identity = np.tile(np.arange(config.n_identities), config.queries_per_identity)
    queries = []
    if query_identity.size:
        qemb = _draw(
            rng, bases, query_identity, config.n_experts, config.cluster_noise, config.cross_expert_jitter
        )
        queries = [
            QuerySample(n, qemb[:, n, :], int(query_identity[n]), BENIGN)
            for n in range(query_identity.size)
        ]
    return indexes, queries


def gallery_queries(indexes: List[ExpertIndex], per_identity: int, seed: int) -> List[QuerySample]:
    """Benign queries drawn from the gallery itself, each excluding its own item.

    This is the query/gallery resampling used when no separate probe set exists.
    """
    rng = np.random.default_rng(seed)
    ref = indexes[0]
    out = []
    for ident in np.unique(ref.identity_ids):
        rows = np.flatnonzero(ref.identity_ids == ident)
        take = rng.choice(rows, size=min(per_identity, rows.size), replace=False)
        for r in np.sort(take):
            item = int(ref.item_ids[r])
            emb = np.stack([idx.embedding(item) for idx in indexes])
            out.append(QuerySample(item, emb, int(ident), BENIGN, frozenset([item])))
    return out


def split_queries(queries: List[QuerySample], eval_per_identity: int):
    """Deterministic split: the last ``eval_per_identity`` queries of each identity go to eval."""
    by_ident = {}
    for q in queries:
        by_ident.setdefault(q.identity_id, []).append(q)
    held = set()
    for qs in by_ident.values():
        for q in qs[len(qs) - eval_per_identity :] if eval_per_identity else []:
            held.add(q.query_id)
    train = [q for q in queries if q.query_id not in held]
    test = [q for q in queries if q.query_id in held]
    return train, test
