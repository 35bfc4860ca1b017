"""Synthetic datasets, a softmax classifier over flat parameter vectors, and seeded SGD.

Model parameters are flat float64 vectors of length (f + 1) * classes: the
weight matrix (f x classes, row-major) followed by the per-class biases.
All operations are pure and deterministic given their arguments and seeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ModelParams = np.ndarray


@dataclass(eq=False)
class Dataset:
    """Feature matrix (n x f), integer labels in [0, classes), optional global row ids."""

    features: np.ndarray
    labels: np.ndarray
    classes: int
    indices: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.indices is None:
            self.indices = np.arange(len(self.labels))

    @property
    def n(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    learning_rate: float
    batch_size: int

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def param_dim(f: int, classes: int) -> int:
    return (f + 1) * classes


def init_params(f: int, classes: int) -> ModelParams:
    """Zero initialization; all logits equal, argmax predicts class 0."""
    return np.zeros(param_dim(f, classes))


def pack_params(weights: np.ndarray, biases: np.ndarray) -> ModelParams:
    return np.concatenate([np.asarray(weights, dtype=float).ravel(), np.asarray(biases, dtype=float)])


def _unpack(params: ModelParams, f: int, classes: int):
    if params.ndim != 1 or len(params) != param_dim(f, classes):
        raise ValueError(
            f"parameter vector of length {len(params)} does not match dimension {param_dim(f, classes)}"
        )
    return params[: f * classes].reshape(f, classes), params[f * classes :]


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check(params: ModelParams, data: Dataset):
    if data.n == 0:
        raise ValueError("empty dataset")
    return _unpack(np.asarray(params, dtype=float), data.features.shape[1], data.classes)


# Blob standard deviation; separation is the distance between adjacent class means,
# so separation/BLOB_SIGMA is the gap in noise units.
BLOB_SIGMA = 0.5


def generate_synthetic_dataset(seed: int, n: int, f: int, classes: int, separation: float) -> Dataset:
    """Class-balanced Gaussian blobs on a line, centered as a group at the origin.

    Class c is centered at (c - (classes - 1) / 2) * separation on feature
    axis 0. Identical arguments give a bit-identical dataset. separation 0
    makes all classes identically distributed by construction.
    """
    if classes < 1 or n < classes:
        raise ValueError("need n >= classes >= 1")
    if f < 1:
        raise ValueError("need f >= 1")
    if separation < 0:
        raise ValueError("separation must be >= 0")
    rng = np.random.default_rng(seed)
    counts = [n // classes + (1 if c < n % classes else 0) for c in range(classes)]
    blocks, labels = [], []
    for c, count in enumerate(counts):
        block = BLOB_SIGMA * rng.standard_normal((count, f))
        block[:, 0] += (c - (classes - 1) / 2) * separation
        blocks.append(block)
        labels.append(np.full(count, c, dtype=np.int64))
    features = np.vstack(blocks)
    labels = np.concatenate(labels)
    perm = rng.permutation(n)
    return Dataset(features=features[perm], labels=labels[perm], classes=classes)


def split_dataset(data: Dataset, test_fraction: float) -> tuple[Dataset, Dataset]:
    """Head/tail split; callers pass pre-shuffled data (generate_synthetic_dataset shuffles)."""
    n_test = int(round(data.n * test_fraction))
    if n_test < 1 or n_test >= data.n:
        raise ValueError("test_fraction leaves an empty split")
    cut = data.n - n_test
    train = Dataset(data.features[:cut], data.labels[:cut], data.classes, data.indices[:cut])
    test = Dataset(data.features[cut:], data.labels[cut:], data.classes, data.indices[cut:])
    return train, test


def evaluate_accuracy(params: ModelParams, data: Dataset) -> float:
    """Fraction of samples whose argmax logit matches the label."""
    weights, biases = _check(params, data)
    logits = data.features @ weights + biases
    return float(np.mean(np.argmax(logits, axis=1) == data.labels))


def local_loss(params: ModelParams, data: Dataset) -> float:
    """Mean cross-entropy over the dataset (log-sum-exp stable)."""
    weights, biases = _check(params, data)
    logp = _log_softmax(data.features @ weights + biases)
    return float(-np.mean(logp[np.arange(data.n), data.labels]))


def loss_gradient(params: ModelParams, data: Dataset) -> ModelParams:
    """Analytic gradient of local_loss with respect to the flat parameter vector."""
    weights, biases = _check(params, data)
    logits = data.features @ weights + biases
    probs = np.exp(_log_softmax(logits))
    probs[np.arange(data.n), data.labels] -= 1.0
    probs /= data.n
    return pack_params(data.features.T @ probs, probs.sum(axis=0))


def local_train(start: ModelParams, data: Dataset, cfg: TrainConfig, rng_seed: int) -> ModelParams:
    """cfg.epochs passes of mini-batch gradient descent; full batch when batch_size >= n.

    Deterministic given (start, data, cfg, rng_seed); start is not mutated.
    """
    _check(start, data)
    w = np.array(start, dtype=float, copy=True)
    rng = np.random.default_rng(rng_seed)
    n = data.n
    for _ in range(cfg.epochs):
        if cfg.batch_size >= n:
            order = np.arange(n)
        else:
            order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            rows = order[lo : lo + cfg.batch_size]
            batch = Dataset(data.features[rows], data.labels[rows], data.classes, data.indices[rows])
            w -= cfg.learning_rate * loss_gradient(w, batch)
    if not np.all(np.isfinite(w)):
        raise ArithmeticError("training diverged to non-finite parameters")
    return w


def global_objective(epsilons, losses, K: int) -> float:
    """Diagnostic objective: sum_k (eps_k / K) * h_k."""
    epsilons = list(epsilons)
    losses = list(losses)
    if len(epsilons) != K or len(losses) != K:
        raise ValueError("epsilons and losses must both have length K")
    return float(sum(e * h for e, h in zip(epsilons, losses)) / K)
