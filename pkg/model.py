"""Small feed-forward binary classifier trained with mini-batch SGD.

Hidden layers use ReLU, the single output unit a sigmoid; the loss is mean
binary cross-entropy. Everything is float64 numpy and seeded, so the same
(initial model, data, TrainConfig) always gives the same weights.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from sklearn.metrics import accuracy_score, precision_recall_fscore_support

from encoder import ManifestEntry, WeightManifest, WeightVector
from errors import DomainError, ShapeError
from utils import dbg_print

RELU = "relu"
SIGMOID = "sigmoid"


@dataclass
class DenseLayer:
    name: str
    weights: np.ndarray
    bias: np.ndarray
    activation: str


@dataclass
class MLPModel:
    layers: list

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("a model needs at least one layer")
        for prev, layer in zip(self.layers, self.layers[1:]):
            if prev.weights.shape[1] != layer.weights.shape[0]:
                raise ShapeError(f"{prev.name} outputs {prev.weights.shape[1]} values but {layer.name} expects {layer.weights.shape[0]}")
        for layer in self.layers:
            if layer.bias.shape != (layer.weights.shape[1],):
                raise ShapeError(f"{layer.name} bias shape {layer.bias.shape} does not match its weights")
        if self.layers[-1].activation != SIGMOID or self.layers[-1].weights.shape[1] != 1:
            raise ShapeError("the output layer must be a single sigmoid unit")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[0]

    def copy(self) -> "MLPModel":
        return MLPModel([
            DenseLayer(layer.name, layer.weights.copy(), layer.bias.copy(), layer.activation) for layer in self.layers
        ])


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.features.shape[0] != self.labels.shape[0]:
            raise ShapeError(f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels")

    def __len__(self):
        return self.labels.shape[0]

    def subset(self, index) -> "Dataset":
        return Dataset(self.features[index], self.labels[index])


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise DomainError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise DomainError(f"epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 1:
            raise DomainError(f"batch_size must be at least 1, got {self.batch_size}")


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float


def init_model(input_dim: int, hidden_units: int = 16, seed: int = 0) -> MLPModel:
    """input -> dense(hidden_units, ReLU) -> dense(1, sigmoid), uniform(+/-1/sqrt(fan_in)) init."""
    rng = np.random.default_rng(seed)
    layers = []
    sizes = [input_dim, hidden_units, 1] if hidden_units else [input_dim, 1]
    for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:]), start=1):
        limit = 1.0 / np.sqrt(fan_in)
        layers.append(DenseLayer(
            name=f"dense_{i}",
            weights=rng.uniform(-limit, limit, size=(fan_in, fan_out)),
            bias=rng.uniform(-limit, limit, size=fan_out),
            activation=SIGMOID if i == len(sizes) - 1 else RELU,
        ))
    return MLPModel(layers)


def _check_width(model: MLPModel, features: np.ndarray):
    if features.ndim != 2 or features.shape[1] != model.input_dim:
        raise ShapeError(f"model expects {model.input_dim} features, got shape {features.shape}")


def _forward_pass(model: MLPModel, x: np.ndarray):
    pre, activations = [], [x]
    for layer in model.layers:
        z = activations[-1] @ layer.weights + layer.bias
        pre.append(z)
        activations.append(expit(z) if layer.activation == SIGMOID else np.maximum(z, 0.0))
    return pre, activations


def forward_proba(model: MLPModel, features) -> np.ndarray:
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    _check_width(model, features)
    _, activations = _forward_pass(model, features)
    return activations[-1][:, 0]


def _loss_and_gradients(model: MLPModel, x: np.ndarray, y: np.ndarray):
    pre, activations = _forward_pass(model, x)
    logits = pre[-1][:, 0]
    loss = float(np.mean(np.logaddexp(0.0, logits) - y * logits))

    delta = ((activations[-1][:, 0] - y) / len(y))[:, None]
    grads = [None] * len(model.layers)
    for i in range(len(model.layers) - 1, -1, -1):
        grads[i] = (activations[i].T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = (delta @ model.layers[i].weights.T) * (pre[i - 1] > 0)
    return loss, grads


def loss_and_gradients(model: MLPModel, data: Dataset):
    """Mean binary cross-entropy and its gradients as [(dW, db), ...] per layer."""
    _check_width(model, data.features)
    return _loss_and_gradients(model, data.features, data.labels.astype(np.float64))


def numerical_gradients(model: MLPModel, data: Dataset, eps: float = 1e-6):
    """Central finite differences of the loss, same layout as loss_and_gradients."""
    probe = model.copy()
    grads = []
    for layer in probe.layers:
        per_tensor = []
        for tensor in (layer.weights, layer.bias):
            grad = np.zeros_like(tensor)
            for idx in np.ndindex(tensor.shape):
                original = tensor[idx]
                tensor[idx] = original + eps
                plus, _ = loss_and_gradients(probe, data)
                tensor[idx] = original - eps
                minus, _ = loss_and_gradients(probe, data)
                tensor[idx] = original
                grad[idx] = (plus - minus) / (2 * eps)
            per_tensor.append(grad)
        grads.append(tuple(per_tensor))
    return grads


@dbg_print
def train_local(model: MLPModel, data: Dataset, cfg: TrainConfig) -> MLPModel:
    if len(data) == 0:
        raise DomainError("cannot train on an empty dataset")
    _check_width(model, data.features)

    trained = model.copy()
    rng = np.random.default_rng(cfg.seed)
    x, y = data.features, data.labels.astype(np.float64)
    for _ in range(cfg.epochs):
        order = rng.permutation(len(data))
        for start in range(0, len(data), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            _, grads = _loss_and_gradients(trained, x[batch], y[batch])
            for layer, (d_weights, d_bias) in zip(trained.layers, grads):
                layer.weights -= cfg.learning_rate * d_weights
                layer.bias -= cfg.learning_rate * d_bias
    return trained


def predict(model: MLPModel, features) -> np.ndarray:
    # ties at exactly 0.5 go to class 1
    return (forward_proba(model, features) >= 0.5).astype(np.int64)


def flatten_weights(model: MLPModel) -> tuple[WeightVector, WeightManifest]:
    """Declaration order, row-major, each layer's weights followed by its bias."""
    parts, entries = [], []
    offset = 0
    for layer in model.layers:
        for suffix, tensor in (("weights", layer.weights), ("bias", layer.bias)):
            entries.append(ManifestEntry(f"{layer.name}/{suffix}", tuple(tensor.shape), offset, tensor.size))
            parts.append(tensor.reshape(-1))
            offset += tensor.size
    values = np.concatenate(parts) if parts else np.zeros(0)
    return WeightVector(values), WeightManifest(tuple(entries))


def load_weights(model: MLPModel, v: WeightVector, manifest: WeightManifest) -> MLPModel:
    _, expected = flatten_weights(model)
    if manifest != expected:
        raise ShapeError("weight manifest does not match the model architecture")
    if len(v) != manifest.total:
        raise ShapeError(f"manifest describes {manifest.total} values, vector has {len(v)}")

    loaded = model.copy()
    tensors = iter(manifest.entries)
    for layer in loaded.layers:
        for attr in ("weights", "bias"):
            entry = next(tensors)
            chunk = v.values[entry.offset:entry.offset + entry.count]
            setattr(layer, attr, chunk.reshape(entry.shape).copy())
    return loaded


def models_equal(a: MLPModel, b: MLPModel) -> bool:
    if len(a.layers) != len(b.layers):
        return False
    return all(
        np.array_equal(la.weights, lb.weights) and np.array_equal(la.bias, lb.bias)
        for la, lb in zip(a.layers, b.layers)
    )


def compute_metrics(predicted, actual) -> MetricsReport:
    """Accuracy plus support-weighted precision, recall and F1."""
    predicted = np.asarray(predicted).reshape(-1)
    actual = np.asarray(actual).reshape(-1)
    if predicted.size == 0:
        raise DomainError("cannot compute metrics on empty input")
    if predicted.shape != actual.shape:
        raise ShapeError(f"{predicted.size} predictions for {actual.size} labels")
    precision, recall, f1, _ = precision_recall_fscore_support(
        actual, predicted, average="weighted", zero_division=0
    )
    return MetricsReport(
        accuracy=float(accuracy_score(actual, predicted)),
        precision=float(precision),
        recall=float(recall),
        f1=float(f1),
    )


def class_metrics(predicted, actual, label: int = 1) -> tuple[float, float, float]:
    """(precision, recall, f1) for a single class."""
    precision, recall, f1, _ = precision_recall_fscore_support(
        np.asarray(actual).reshape(-1), np.asarray(predicted).reshape(-1),
        labels=[label], average=None, zero_division=0,
    )
    return float(precision[0]), float(recall[0]), float(f1[0])
