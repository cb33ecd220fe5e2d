"""Dense feed-forward classifier: ReLU hidden layers, softmax output.

The same model type is used for every role in the pipeline (baseline,
ensemble members, shadows, attack models, teachers, student). Training is
plain mini-batch SGD with optional momentum on mean cross-entropy.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, FormatError, InputError
from .rng import SplitMix64

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
ACTIVATION = "relu-softmax"


@dataclass
class MlpModel:
    """Layer sizes plus per-layer ``(out, in)`` weights and ``(out,)`` biases."""

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = ACTIVATION

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ConfigurationError("parameter list length does not match layer_dims")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_dims[l + 1], self.layer_dims[l]):
                raise ConfigurationError(f"layer {l}: weight shape {w.shape} != "
                                         f"{(self.layer_dims[l + 1], self.layer_dims[l])}")
            if b.shape != (self.layer_dims[l + 1],):
                raise ConfigurationError(f"layer {l}: bias shape {b.shape}")

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def class_count(self) -> int:
        return self.layer_dims[-1]

    def copy(self) -> "MlpModel":
        return MlpModel(list(self.layer_dims), [w.copy() for w in self.weights],
                        [b.copy() for b in self.biases], self.activation)

    def params(self) -> list[np.ndarray]:
        """Flat parameter list ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        """Batched forward pass; ``x`` is ``(n, input_dim)``."""
        return _forward(self, _as_batch(self, x))[-1]

    def predict(self, x: np.ndarray) -> np.ndarray:
        # np.argmax returns the first maximum, i.e. the lowest class index on ties
        return np.argmax(self.predict_proba(x), axis=1)

    __call__ = predict_proba


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be positive")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError("momentum must be in [0, 1)")
        if self.seed < 0:
            raise ConfigurationError("seed must be a non-negative integer")


@dataclass
class TrainResult:
    model: MlpModel
    loss_history: list[float] = field(default_factory=list)


def init_mlp(layer_dims, seed: int) -> MlpModel:
    """Glorot-uniform weights from a SplitMix64 stream, zero biases."""
    dims = list(layer_dims) if layer_dims is not None else []
    if len(dims) < 2:
        raise ConfigurationError("layer_dims needs at least an input and an output size")
    if any(int(d) != d or d < 1 for d in dims):
        raise ConfigurationError(f"layer sizes must be positive integers, got {dims}")
    rng = SplitMix64(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(fan_out * fan_in, -limit, limit).reshape(fan_out, fan_in)
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return MlpModel(dims, weights, biases)


def _as_batch(model: MlpModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise InputError(f"expected inputs of dimension {model.input_dim}, got shape {x.shape}")
    return x


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward(model: MlpModel, x: np.ndarray) -> list[np.ndarray]:
    """Activations of every layer, input first and softmax output last."""
    acts = [x]
    h = x
    last = len(model.weights) - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w.T + b
        h = softmax(z) if l == last else np.maximum(z, 0.0)
        acts.append(h)
    return acts


def forward(model: MlpModel, x) -> np.ndarray:
    """Confidence vector for a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.input_dim:
        raise InputError(f"expected a vector of length {model.input_dim}, got shape {x.shape}")
    return _forward(model, x[None, :])[-1][0]


def _check_labels(model: MlpModel, y) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or not np.issubdtype(y.dtype, np.integer):
        raise InputError("labels must be a 1-D integer array")
    if len(y) and (y.min() < 0 or y.max() >= model.class_count):
        raise InputError(f"label out of range [0, {model.class_count})")
    return y


def loss_and_grad(model: MlpModel, batch_x, batch_y):
    """Mean cross-entropy and its exact gradient.

    Returns ``(loss, grads)`` where ``grads`` is ``[dW0, db0, dW1, db1, ...]``,
    aligned with :meth:`MlpModel.params`.
    """
    x = _as_batch(model, batch_x)
    y = _check_labels(model, batch_y)
    n = len(y)
    if n == 0 or x.shape[0] != n:
        raise InputError("batch must be nonempty with one label per row")
    acts = _forward(model, x)
    probs = acts[-1]
    picked = probs[np.arange(n), y]
    loss = float(-np.mean(np.log(np.maximum(picked, np.finfo(float).tiny))))

    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads: list[np.ndarray] = []
    for l in range(len(model.weights) - 1, -1, -1):
        grads.append(delta.sum(axis=0))
        grads.append(delta.T @ acts[l])
        if l:
            delta = (delta @ model.weights[l]) * (acts[l] > 0)
    grads.reverse()
    return loss, grads


def train(model: MlpModel, data, cfg: TrainConfig, *, history: bool = False):
    """Mini-batch SGD on ``data`` (a :class:`~pase.data.Dataset`).

    Returns a new trained model; with ``history=True`` returns a
    :class:`TrainResult` carrying the per-epoch mean loss as well.
    """
    if data.n == 0:
        raise InputError("cannot train on an empty dataset")
    if data.dim != model.input_dim or data.class_count != model.class_count:
        raise InputError(f"dataset ({data.dim} features, {data.class_count} classes) does not "
                         f"match model {model.layer_dims}")
    model = model.copy()
    params = model.params()
    velocity = [np.zeros_like(p) for p in params]
    rng = SplitMix64(cfg.seed)
    x, y = data.features, data.labels
    n = data.n
    losses = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = loss_and_grad(model, x[idx], y[idx])
            total += loss * len(idx)
            for p, v, g in zip(params, velocity, grads):
                v *= cfg.momentum
                v -= cfg.learning_rate * g
                p += v
        losses.append(total / n)
        if not np.isfinite(losses[-1]):
            raise InputError(f"training diverged at epoch {epoch} (loss={losses[-1]})")
    logger.debug("trained %s for %d epochs, final loss %.4g", model.layer_dims, cfg.epochs,
                 losses[-1] if losses else float("nan"))
    if history:
        return TrainResult(model, losses)
    return model


def evaluate(model: MlpModel, data) -> float:
    """Fraction of argmax-correct predictions."""
    if data.n == 0:
        raise InputError("cannot evaluate on an empty dataset")
    return float(np.mean(model.predict(data.features) == data.labels))


def model_to_dict(model: MlpModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "activation": model.activation,
        "layer_dims": model.layer_dims,
        "weights": [w.ravel().tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
    }


def model_from_dict(d: dict) -> MlpModel:
    if d.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported model format_version {d.get('format_version')!r}")
    try:
        dims = [int(v) for v in d["layer_dims"]]
        weights = [np.asarray(w, dtype=np.float64).reshape(dims[l + 1], dims[l])
                   for l, w in enumerate(d["weights"])]
        biases = [np.asarray(b, dtype=np.float64) for b in d["biases"]]
        return MlpModel(dims, weights, biases, d.get("activation", ACTIVATION))
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"malformed model document: {exc}") from exc


def save_model(model: MlpModel, path) -> None:
    # json emits repr() floats, the shortest string that round-trips a double
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path) -> MlpModel:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return model_from_dict(d)
