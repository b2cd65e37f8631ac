"""Detect adversarial queries against embedding retrieval by checking the
consistency of top-K retrievals across several expert models."""

from .embedding import ExpertIndex, GalleryItem, QuerySample, cosine_similarity, normalize
from .retrieval import SupportSet, retrieve_top_k
from .features import (
    ContextFeature,
    assemble_context_feature,
    cross_expert_affinity,
    feature_dim,
    featurize,
    query_support_affinity,
    support_support_affinity,
)
from .detector import DetectorModel, Hyperparams, mlp_forward, predict, train_detector, voting_detect
from .metrics import MetricsReport, confusion_and_f1, roc_auc
from .scenario import ScenarioConfig, generate_scenario
from .attacks import (
    AttackConfig,
    adaptive_attack,
    naive_attack,
    relation_stats,
    targeted_multi_attack,
)
from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"
