"""MLP attack detector trained from scratch, and the voting baseline.

The network is ``d -> 512 -> 256 -> 1`` with ReLU hidden layers and a single
sigmoid output, trained on mean binary cross-entropy with SGD + classical
momentum.
"""

from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    DataError,
    DimensionMismatch,
    EmptyInput,
    InvalidConfig,
    NonFinite,
    SingleClassDataset,
    SingleExpert,
    MismatchedSupportSizes,
)
from .retrieval import SupportSet

# keeps sigmoid outputs strictly inside (0, 1)
_P_MIN = np.nextafter(0.0, 1.0)
_P_MAX = np.nextafter(1.0, 0.0)

PRECISIONS = {"float32": np.float32, "float64": np.float64}
DEFAULT_VOTING_THRESHOLD = 5


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 1e-4
    momentum: float = 0.9
    batch_size: int = 1024
    iterations: int = 5000
    seed: int = 0
    hidden: Tuple[int, ...] = (512, 256)
    # arithmetic width of the training matmuls; stored weights are always float64
    precision: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.learning_rate <= 0 or not np.isfinite(self.learning_rate):
            raise InvalidConfig("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise InvalidConfig("momentum must be in [0, 1)")
        if self.batch_size < 1 or self.iterations < 0:
            raise InvalidConfig("batch_size must be >= 1 and iterations >= 0")
        if any(h < 1 for h in self.hidden):
            raise InvalidConfig("hidden layer sizes must be positive")
        if self.precision not in PRECISIONS:
            raise InvalidConfig(f"precision must be one of {sorted(PRECISIONS)}")


@dataclass(frozen=True)
class LabeledExample:
    feature: np.ndarray
    label: int


@dataclass(eq=False)
class DetectorModel:
    """Layer weights ``W[l]`` shaped (fan_in, fan_out) and biases ``b[l]``."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    hyperparams: Hyperparams = field(default_factory=Hyperparams)
    n_experts: Optional[int] = None
    support_size: Optional[int] = None
    feature_blocks: Tuple[str, ...] = ("qs", "ss", "ce")
    loss_history: Optional[np.ndarray] = None

    def __post_init__(self):
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64).reshape(-1) for b in self.biases]
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DataError("model needs matching, non-empty weight and bias lists")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise DataError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise DataError(f"layer {i} input {w.shape[0]} != previous output")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NonFinite(f"layer {i} has non-finite parameters")
        if self.weights[-1].shape[1] != 1:
            raise DataError("output layer must have a single unit")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def layer_sizes(self) -> Tuple[int, ...]:
        return (self.input_dim,) + tuple(w.shape[1] for w in self.weights)

    def params(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softplus(z):
    return np.logaddexp(0.0, z)


def init_params(layer_sizes: Sequence[int], rng: np.random.Generator, dtype=np.float64):
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return weights, biases


def _forward(weights, biases, x):
    """Returns the logits (shape (B,)) and the post-activation of every hidden layer."""
    acts = [x]
    h = x
    for w, b in zip(weights[:-1], biases[:-1]):
        h = h @ w
        h += b
        np.maximum(h, 0, out=h)
        acts.append(h)
    z = (h @ weights[-1])[:, 0] + biases[-1][0]
    return z, acts


def logits(model: DetectorModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != model.input_dim:
        raise DimensionMismatch(f"input dimension {x2.shape[-1]} != model input {model.input_dim}")
    z, _ = _forward(model.weights, model.biases, x2)
    if not np.all(np.isfinite(z)):
        raise NonFinite("non-finite logits")
    return z[0] if single else z


def mlp_forward(model: DetectorModel, x):
    """Attack probability for one feature vector (float) or a batch (array)."""
    z = logits(model, x)
    p = np.clip(sigmoid(np.atleast_1d(z)), _P_MIN, _P_MAX)
    return float(p[0]) if np.ndim(z) == 0 else p


def loss_and_grads(weights, biases, x, y):
    """Mean BCE loss and its gradient w.r.t. every weight and bias."""
    y = np.asarray(y, dtype=x.dtype)
    z, acts = _forward(weights, biases, x)
    loss = float(np.mean(_softplus(z) - y * z))
    dz = ((sigmoid(z) - y) / x.shape[0]).astype(x.dtype)[:, None]
    gw, gb = [None] * len(weights), [None] * len(weights)
    delta = dz
    for layer in range(len(weights) - 1, -1, -1):
        a = acts[layer]
        gw[layer] = a.T @ delta
        gb[layer] = delta.sum(axis=0)
        if layer:
            delta = delta @ weights[layer].T
            delta *= acts[layer] > 0
    return loss, gw, gb


def bce_loss(model: DetectorModel, x, y) -> float:
    z = logits(model, np.atleast_2d(x))
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(_softplus(z) - y * z))


def _validate_dataset(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyInput("training set is empty")
    if y.shape != (x.shape[0],):
        raise DimensionMismatch(f"{x.shape[0]} features vs {y.shape} labels")
    if not np.all((y == 0) | (y == 1)):
        raise DataError("labels must be 0 or 1")
    if np.unique(y).size < 2:
        raise SingleClassDataset("training set needs both benign and adversarial examples")
    if not np.all(np.isfinite(x)):
        raise NonFinite("training features contain NaN or Inf")
    return x, y.astype(np.int64)


def train_detector(
    features,
    labels,
    hyperparams: Hyperparams = Hyperparams(),
    *,
    n_experts: Optional[int] = None,
    support_size: Optional[int] = None,
    feature_blocks: Sequence[str] = ("qs", "ss", "ce"),
) -> DetectorModel:
    """Run exactly ``hyperparams.iterations`` momentum-SGD steps.

    One seeded generator drives initialisation and then batch sampling
    (uniform, with replacement). Per-iteration batch losses are kept in
    ``model.loss_history``.
    """
    x, y = _validate_dataset(features, labels)
    hp = hyperparams
    dtype = PRECISIONS[hp.precision]
    rng = np.random.default_rng(hp.seed)
    sizes = (x.shape[1],) + hp.hidden + (1,)
    weights, biases = init_params(sizes, rng, dtype)
    xs = x.astype(dtype)
    ys = y.astype(dtype)
    vw = [np.zeros_like(w) for w in weights]
    vb = [np.zeros_like(b) for b in biases]
    lr = dtype(hp.learning_rate)
    mom = dtype(hp.momentum)
    history = np.empty(hp.iterations)
    for it in range(hp.iterations):
        batch = rng.integers(0, x.shape[0], size=hp.batch_size)
        loss, gw, gb = loss_and_grads(weights, biases, xs[batch], ys[batch])
        if not np.isfinite(loss):
            raise NonFinite(f"loss became non-finite at iteration {it}")
        history[it] = loss
        for p, v, g in zip(weights + biases, vw + vb, gw + gb):
            v *= mom
            v -= lr * g
            p += v
    return DetectorModel(
        weights,
        biases,
        hp,
        n_experts,
        support_size,
        tuple(feature_blocks),
        history,
    )


def predict(model: DetectorModel, x, threshold: float = 0.5):
    """Label 1 (attack) iff probability >= threshold. Returns ``(labels, probabilities)``."""
    p = mlp_forward(model, x)
    if np.ndim(p) == 0:
        return int(p >= threshold), p
    return (p >= threshold).astype(np.int64), p


def voting_detect(supports: Sequence[SupportSet], threshold: int = DEFAULT_VOTING_THRESHOLD):
    """Attack iff fewer than ``threshold`` items are shared by every expert's support set.

    Returns ``(label, common_count)``.
    """
    if len(supports) < 2:
        raise SingleExpert("voting needs at least two experts")
    k = supports[0].k
    if any(s.k != k for s in supports):
        raise MismatchedSupportSizes(f"support sizes differ: {[s.k for s in supports]}")
    common = frozenset.intersection(*(s.id_set() for s in supports))
    count = len(common)
    return int(count < threshold), count


def voting_labels(common_counts, threshold: int = DEFAULT_VOTING_THRESHOLD) -> np.ndarray:
    return (np.asarray(common_counts) < threshold).astype(np.int64)


def hyperparams_dict(hp: Hyperparams) -> dict:
    d = asdict(hp)
    d["hidden"] = list(hp.hidden)
    return d
