"""Embedding-space attacks on query embeddings and relation statistics.

Attacks only ever touch the query's per-expert embeddings; galleries are
read-only. Every perturbed embedding stays unit-norm and inside the chord
ball ``||x - original||_2 <= epsilon`` (the intersection of that ball with
the sphere is a spherical cap, which is what :func:`project_to_cap` enforces).
"""

from dataclasses import asdict, dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .detector import DetectorModel
from .embedding import ADVERSARIAL, ExpertIndex, QuerySample, check_compatible, normalize_rows
from .errors import InvalidConfig, NotTrained
from .features import featurize
from .retrieval import DEFAULT_K, retrieve_top_k

ATTACK_KINDS = ("naive", "adaptive", "targeted")


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "naive"
    epsilon: float = 0.8
    steps: int = 10
    step_size: float = 0.02
    affinity_weight: float = 1.0
    target_identity: Optional[int] = None
    seed: int = 0
    refresh_every: int = 5
    random_start: bool = True
    k: int = DEFAULT_K

    def validate(self) -> None:
        if self.kind not in ATTACK_KINDS:
            raise InvalidConfig(f"attack kind must be one of {ATTACK_KINDS}, got {self.kind!r}")
        if not np.isfinite(self.epsilon) or self.epsilon < 0:
            raise InvalidConfig("epsilon must be finite and >= 0")
        if self.steps < 0 or self.step_size < 0 or not np.isfinite(self.step_size):
            raise InvalidConfig("steps and step_size must be >= 0")
        if not np.isfinite(self.affinity_weight):
            raise InvalidConfig("affinity_weight must be finite")
        if self.refresh_every < 1:
            raise InvalidConfig("refresh_every must be >= 1")
        if self.k < 1:
            raise InvalidConfig("k must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def for_kind(cls, kind: str, **overrides) -> "AttackConfig":
        """Config with the per-kind defaults, then ``overrides`` (None values ignored)."""
        if kind not in KIND_DEFAULTS:
            raise InvalidConfig(f"attack kind must be one of {ATTACK_KINDS}, got {kind!r}")
        values = dict(KIND_DEFAULTS[kind], kind=kind)
        values.update({k: v for k, v in overrides.items() if v is not None})
        cfg = cls(**values)
        cfg.validate()
        return cfg


# adaptive: a 0.2 total refinement path from the random start; longer paths let
# the affinity term undo the perturbation entirely (see README)
KIND_DEFAULTS = {
    "naive": {"epsilon": 0.8, "steps": 0, "step_size": 0.0},
    "adaptive": {"epsilon": 0.8, "steps": 10, "step_size": 0.02, "affinity_weight": 1.0},
    "targeted": {"epsilon": 0.3, "steps": 60, "step_size": 0.05},
}


def _cap_angle(epsilon: float) -> float:
    return 2.0 * np.arcsin(min(epsilon, 2.0) / 2.0)


def _orthogonal_unit(origin: np.ndarray) -> np.ndarray:
    axis = np.zeros_like(origin)
    axis[np.argmin(np.abs(origin))] = 1.0
    t = axis - np.dot(axis, origin) * origin
    return t / np.linalg.norm(t)


def project_to_cap(x, origin, epsilon: float) -> np.ndarray:
    """Nearest point to unit ``x`` on the sphere within chord distance ``epsilon`` of ``origin``.

    Works row-wise on (N, D) arrays.
    """
    x = np.array(x, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    if epsilon >= 2.0:
        return x
    single = x.ndim == 1
    x2, o2 = np.atleast_2d(x), np.atleast_2d(origin)
    theta = _cap_angle(epsilon)
    for r in range(x2.shape[0]):
        if np.linalg.norm(x2[r] - o2[r]) <= epsilon:
            continue
        t = x2[r] - np.dot(x2[r], o2[r]) * o2[r]
        tn = np.linalg.norm(t)
        t = _orthogonal_unit(o2[r]) if tn < 1e-12 else t / tn
        x2[r] = np.cos(theta) * o2[r] + np.sin(theta) * t
    return x2[0] if single else x2


def move_toward(origin, direction, epsilon: float) -> np.ndarray:
    """Walk from unit ``origin`` along the great circle toward unit ``direction``.

    Stops after chord distance ``epsilon`` or on reaching ``direction``.
    """
    o = np.asarray(origin, dtype=np.float64)
    u = np.asarray(direction, dtype=np.float64)
    if np.linalg.norm(u - o) <= epsilon:
        return u.copy()
    t = u - np.dot(u, o) * o
    tn = np.linalg.norm(t)
    t = _orthogonal_unit(o) if tn < 1e-12 else t / tn
    theta = _cap_angle(epsilon)
    out = np.cos(theta) * o + np.sin(theta) * t
    return out / np.linalg.norm(out)


def naive_attack(
    query: QuerySample,
    config: AttackConfig,
    rng: Optional[np.random.Generator] = None,
    directions=None,
) -> QuerySample:
    """Push every expert channel by ``epsilon`` toward its own random direction.

    Independent directions per channel are what break cross-expert agreement.
    ``directions`` (N x D unit rows) overrides the random draw.
    """
    config.validate()
    if config.epsilon == 0:
        return query.with_embeddings(query.embeddings, label=ADVERSARIAL)
    if directions is None:
        rng = np.random.default_rng(config.seed) if rng is None else rng
        directions = normalize_rows(rng.standard_normal(query.embeddings.shape))
    directions = np.asarray(directions, dtype=np.float64)
    moved = np.stack(
        [move_toward(query.embeddings[e], directions[e], config.epsilon) for e in range(query.n_experts)]
    )
    return query.with_embeddings(project_to_cap(moved, query.embeddings, config.epsilon), ADVERSARIAL)


def _tangent_grad(x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Gradient of ``<x/|x|, v>`` w.r.t. raw ``x``, row-wise."""
    norm = np.linalg.norm(x, axis=1, keepdims=True)
    xh = x / norm
    return (v - np.sum(xh * v, axis=1, keepdims=True) * xh) / norm


def adaptive_objective(x, identity_means, support_sums, affinity_weight: float, constant: float = 0.0):
    """Smooth part of the adaptive loss and its gradient.

    ``L = sum_e <x_e, mean own-identity gallery embedding>
          - w * (sum_e sum_j <x_e, s_ej> + constant)`` with ``x_e`` normalised;
    ``constant`` carries the piecewise-constant support-support and
    cross-expert sums.
    """
    x = np.asarray(x, dtype=np.float64)
    xh = x / np.linalg.norm(x, axis=1, keepdims=True)
    misrank = float(np.sum(xh * identity_means))
    affinity = float(np.sum(xh * support_sums)) + constant
    v = identity_means - affinity_weight * support_sums
    return misrank - affinity_weight * affinity, _tangent_grad(x, v)


def targeted_objective(x, target_centroids):
    """``-sum_e cos(x_e, c_e)`` and its gradient."""
    x = np.asarray(x, dtype=np.float64)
    xh = x / np.linalg.norm(x, axis=1, keepdims=True)
    return -float(np.sum(xh * target_centroids)), _tangent_grad(x, -target_centroids)


def _normalized_step(x, grad, step_size):
    gn = np.linalg.norm(grad, axis=1, keepdims=True)
    step = np.divide(grad, gn, out=np.zeros_like(grad), where=gn > 0)
    return normalize_rows(x - step_size * step)


def _supports(query_emb, indexes, k, exclude_ids):
    return [retrieve_top_k(idx, query_emb[e], k, exclude_ids) for e, idx in enumerate(indexes)]


def _constant_affinity(supports) -> float:
    """Sum of the support-support and cross-expert entries for fixed supports."""
    total = 0.0
    for s in supports:
        gram = s.embeddings @ s.embeddings.T
        total += float(np.sum(np.triu(gram, k=1)))
    if len(supports) > 1:
        id_sets = [s.id_set() for s in supports]
        n = len(supports)
        for i, s in enumerate(supports):
            for item in s.item_ids:
                total += sum(int(item) in id_sets[l] for l in range(n) if l != i) / (n - 1)
    return total


def adaptive_attack(
    query: QuerySample,
    indexes: Sequence[ExpertIndex],
    detector: Optional[DetectorModel],
    config: AttackConfig,
    rng: Optional[np.random.Generator] = None,
) -> QuerySample:
    """Projected normalised-gradient descent on misranking plus the affinity-restoring term.

    Supports are re-retrieved every ``refresh_every`` steps and held fixed in
    between, so only the query-support term steers the gradient.
    """
    config.validate()
    if detector is None or detector.n_experts is None or detector.support_size is None:
        raise NotTrained("adaptive attack needs a trained detector with (N, K) metadata")
    check_compatible(query, indexes)
    if detector.n_experts != len(indexes):
        raise InvalidConfig(f"detector trained for N={detector.n_experts}, got {len(indexes)} experts")
    k = detector.support_size
    original = query.embeddings
    if config.steps == 0:
        return query.with_embeddings(original, label=ADVERSARIAL)
    if config.random_start and config.epsilon > 0:
        rng = np.random.default_rng(config.seed) if rng is None else rng
        x = np.array(naive_attack(query, config, rng).embeddings)
    else:
        x = np.array(original)
    own = np.stack([idx.identity_rows(query.identity_id).mean(axis=0) for idx in indexes])
    supports = None
    for step in range(config.steps):
        if step % config.refresh_every == 0:
            supports = _supports(x, indexes, k, query.exclude_ids)
            sums = np.stack([s.embeddings.sum(axis=0) for s in supports])
        _, grad = adaptive_objective(x, own, sums, config.affinity_weight)
        x = project_to_cap(_normalized_step(x, grad, config.step_size), original, config.epsilon)
    return query.with_embeddings(x, label=ADVERSARIAL)


def adaptive_loss(query: QuerySample, indexes: Sequence[ExpertIndex], k: int, affinity_weight: float) -> float:
    """Full adaptive loss at the query's current embeddings (fresh retrieval)."""
    supports = _supports(query.embeddings, indexes, k, query.exclude_ids)
    own = np.stack([idx.identity_rows(query.identity_id).mean(axis=0) for idx in indexes])
    sums = np.stack([s.embeddings.sum(axis=0) for s in supports])
    value, _ = adaptive_objective(query.embeddings, own, sums, affinity_weight, _constant_affinity(supports))
    return value


def identity_centroids(index: ExpertIndex) -> Tuple[np.ndarray, np.ndarray]:
    idents = np.unique(index.identity_ids)
    cents = np.stack([index.identity_rows(i).mean(axis=0) for i in idents])
    return idents, normalize_rows(cents)


def nearest_other_identity(query: QuerySample, index: ExpertIndex, channel: int = 0) -> int:
    idents, cents = identity_centroids(index)
    sims = cents @ query.embeddings[channel]
    sims[idents == query.identity_id] = -np.inf
    return int(idents[int(np.argmax(sims))])


def targeted_success(query_emb, indexes, target_identity: int, k: int, exclude_ids=()) -> bool:
    """True iff at least half of every expert's top-K belongs to the target identity."""
    for e, idx in enumerate(indexes):
        s = retrieve_top_k(idx, query_emb[e], k, exclude_ids)
        hits = int(np.sum(idx.identity_ids[[idx.position(i) for i in s.item_ids]] == target_identity))
        if 2 * hits < k:
            return False
    return True


def targeted_multi_attack(
    query: QuerySample,
    indexes: Sequence[ExpertIndex],
    target_identity: Optional[int],
    config: AttackConfig,
) -> Tuple[QuerySample, bool]:
    """Drive every channel toward the target identity's centroid in that expert's gallery."""
    config.validate()
    check_compatible(query, indexes)
    if target_identity is None:
        target_identity = nearest_other_identity(query, indexes[0])
    if target_identity == query.identity_id:
        raise InvalidConfig("target identity must differ from the query's identity")
    cents = []
    for idx in indexes:
        rows = idx.identity_rows(target_identity)
        if rows.shape[0] == 0:
            raise InvalidConfig(f"target identity {target_identity} absent from expert {idx.expert_id}")
        cents.append(rows.mean(axis=0))
    cents = normalize_rows(np.stack(cents))
    original = query.embeddings
    x = np.array(original)
    for _ in range(config.steps):
        _, grad = targeted_objective(x, cents)
        x = project_to_cap(_normalized_step(x, grad, config.step_size), original, config.epsilon)
    success = targeted_success(x, indexes, target_identity, config.k, query.exclude_ids)
    return query.with_embeddings(x, label=ADVERSARIAL), success


class AttackResult(NamedTuple):
    queries: List[QuerySample]
    successes: Optional[List[bool]]


def attack_queries(
    queries: Sequence[QuerySample],
    indexes: Sequence[ExpertIndex],
    config: AttackConfig,
    detector: Optional[DetectorModel] = None,
) -> AttackResult:
    """Attack a batch with one seeded stream, consumed in query order."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    out, successes = [], None
    if config.kind == "naive":
        out = [naive_attack(q, config, rng) for q in queries]
    elif config.kind == "adaptive":
        out = [adaptive_attack(q, indexes, detector, config, rng) for q in queries]
    else:
        successes = []
        for q in queries:
            adv, ok = targeted_multi_attack(q, indexes, config.target_identity, config)
            out.append(adv)
            successes.append(ok)
    return AttackResult(out, successes)


class RelationStats(NamedTuple):
    query_id: int
    label: str
    qs_mean: float
    ss_mean: Optional[float]
    common_count: Optional[int]


def relation_stats(queries: Sequence[QuerySample], indexes: Sequence[ExpertIndex], k: int) -> List[RelationStats]:
    """Per query: mean query-support cosine, mean support-support cosine, common support count."""
    fb = featurize(queries, indexes, k)
    n = len(indexes)
    qs_mean = fb.qs.mean(axis=(1, 2))
    ss_mean = fb.ss.mean(axis=(1, 2)) if k > 1 else [None] * len(queries)
    common = fb.common_counts() if n > 1 else [None] * len(queries)
    return [
        RelationStats(
            int(q.query_id),
            q.label,
            float(qs_mean[i]),
            None if ss_mean[i] is None else float(ss_mean[i]),
            None if common[i] is None else int(common[i]),
        )
        for i, q in enumerate(queries)
    ]
