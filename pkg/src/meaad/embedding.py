"""Unit-norm embeddings, cosine similarity and per-expert gallery indexes."""

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DataError, DimensionMismatch, NonFinite, ZeroVector

NORM_TOL = 1e-9
_ZERO_NORM = 1e-12

BENIGN = "benign"
ADVERSARIAL = "adversarial"
UNKNOWN = "unknown"
QUERY_LABELS = (BENIGN, ADVERSARIAL, UNKNOWN)


def normalize(v) -> np.ndarray:
    """Return ``v / ||v||_2`` as a float64 array.

    Raises NonFinite for NaN/Inf entries and ZeroVector when the norm is
    below 1e-12.
    """
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise NonFinite("vector has NaN or Inf entries")
    norm = np.linalg.norm(v)
    if norm < _ZERO_NORM:
        raise ZeroVector(f"cannot normalize vector with norm {norm:g}")
    return v / norm


def normalize_rows(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise NonFinite("matrix has NaN or Inf entries")
    norms = np.linalg.norm(m, axis=-1, keepdims=True)
    if np.any(norms < _ZERO_NORM):
        raise ZeroVector("cannot normalize a zero row")
    return m / norms


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"dimensions differ: {a.shape} vs {b.shape}")
    # clamp absorbs rounding on unit vectors
    return float(min(1.0, max(-1.0, np.dot(a, b))))


def check_unit_rows(m: np.ndarray, what: str = "embedding") -> None:
    if not np.all(np.isfinite(m)):
        raise NonFinite(f"{what} has NaN or Inf entries")
    dev = np.abs(np.linalg.norm(m, axis=-1) - 1.0)
    if dev.size and dev.max() > NORM_TOL:
        raise DataError(f"{what} is not unit-norm (max deviation {dev.max():.3g})")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GalleryItem:
    item_id: int
    identity_id: int
    embedding: np.ndarray


@dataclass(frozen=True, eq=False)
class ExpertIndex:
    """One expert's gallery: parallel arrays of ids, identities and unit embeddings."""

    expert_id: int
    item_ids: np.ndarray
    identity_ids: np.ndarray
    embeddings: np.ndarray
    _pos: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = np.asarray(self.item_ids, dtype=np.int64)
        idents = np.asarray(self.identity_ids, dtype=np.int64)
        emb = np.asarray(self.embeddings, dtype=np.float64)
        if emb.ndim != 2 or emb.shape[0] == 0:
            raise DataError("expert index needs a non-empty 2-d embedding table")
        if emb.shape[1] < 2:
            raise DimensionMismatch("embedding dimension must be at least 2")
        if ids.shape != (emb.shape[0],) or idents.shape != ids.shape:
            raise DataError("item_ids, identity_ids and embeddings disagree in length")
        if np.any(ids < 0) or np.any(idents < 0):
            raise DataError("ids must be non-negative")
        if np.unique(ids).size != ids.size:
            raise DataError("duplicate item_id in expert index")
        check_unit_rows(emb)
        object.__setattr__(self, "item_ids", _frozen(ids))
        object.__setattr__(self, "identity_ids", _frozen(idents))
        object.__setattr__(self, "embeddings", _frozen(emb))
        object.__setattr__(self, "_pos", {int(i): n for n, i in enumerate(ids)})

    @classmethod
    def from_items(cls, expert_id: int, items: Iterable[GalleryItem]) -> "ExpertIndex":
        items = list(items)
        if not items:
            raise DataError("expert index needs at least one item")
        emb = normalize_rows(np.stack([np.asarray(it.embedding, dtype=np.float64) for it in items]))
        return cls(
            expert_id,
            np.array([it.item_id for it in items], dtype=np.int64),
            np.array([it.identity_id for it in items], dtype=np.int64),
            emb,
        )

    @property
    def dimension(self) -> int:
        return self.embeddings.shape[1]

    def __len__(self) -> int:
        return self.item_ids.shape[0]

    def position(self, item_id: int) -> int:
        return self._pos[int(item_id)]

    def embedding(self, item_id: int) -> np.ndarray:
        return self.embeddings[self._pos[int(item_id)]]

    def items(self):
        for n in range(len(self)):
            yield GalleryItem(int(self.item_ids[n]), int(self.identity_ids[n]), self.embeddings[n])

    def identity_rows(self, identity_id: int) -> np.ndarray:
        return self.embeddings[self.identity_ids == identity_id]


@dataclass(frozen=True, eq=False)
class QuerySample:
    """A probe with one unit embedding per expert channel (shape N x D)."""

    query_id: int
    embeddings: np.ndarray
    identity_id: int = 0
    label: str = UNKNOWN
    exclude_ids: frozenset = frozenset()

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=np.float64)
        if emb.ndim != 2 or emb.shape[0] < 1:
            raise DataError("query needs an N x D embedding array with N >= 1")
        if emb.shape[1] < 2:
            raise DimensionMismatch("embedding dimension must be at least 2")
        if self.label not in QUERY_LABELS:
            raise DataError(f"unknown query label {self.label!r}")
        check_unit_rows(emb, "query embedding")
        object.__setattr__(self, "embeddings", _frozen(emb))
        object.__setattr__(self, "exclude_ids", frozenset(int(i) for i in self.exclude_ids))

    @property
    def n_experts(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dimension(self) -> int:
        return self.embeddings.shape[1]

    def with_embeddings(self, embeddings, label: Optional[str] = None) -> "QuerySample":
        return QuerySample(
            self.query_id,
            embeddings,
            self.identity_id,
            self.label if label is None else label,
            self.exclude_ids,
        )


def check_compatible(query: QuerySample, indexes: Sequence[ExpertIndex]) -> None:
    if query.n_experts != len(indexes):
        raise DimensionMismatch(
            f"query has {query.n_experts} expert channels, got {len(indexes)} indexes"
        )
    for idx in indexes:
        if idx.dimension != query.dimension:
            raise DimensionMismatch(
                f"expert {idx.expert_id} has dimension {idx.dimension}, query has {query.dimension}"
            )
