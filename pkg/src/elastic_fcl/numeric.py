"""Dense feed-forward regressor on flat parameter vectors.

Parameters of an MLP are stored as a single float64 vector. Layer ``l``
contributes its weight matrix (``fan_in x fan_out``, row-major) followed by
its bias vector. Every function here is pure: inputs are never mutated.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

ACTIVATIONS = ("relu", "tanh")


class DimensionError(ValueError):
    """Raised when array shapes disagree with the model specification."""


class EmptyDatasetError(ValueError):
    pass


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: Tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least an input and an output layer")
        if any(s <= 0 for s in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        if sizes[-1] != 1:
            raise ValueError("output dimension must be 1 (scalar regression)")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_params(self) -> int:
        s = self.layer_sizes
        return sum(s[i] * s[i + 1] + s[i + 1] for i in range(len(s) - 1))

    def layer_shapes(self) -> List[Tuple[int, int]]:
        s = self.layer_sizes
        return [(s[i], s[i + 1]) for i in range(len(s) - 1)]


@dataclass(frozen=True)
class LabeledSet:
    """Feature matrix plus scalar labels in [0, 1].

    ``ids`` optionally carries a stable per-sample identity so that splits can
    be checked for disjointness.
    """

    features: np.ndarray
    labels: np.ndarray
    ids: np.ndarray = field(default=None)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.float64).reshape(-1)
        if X.ndim == 1:
            X = X.reshape(-1, 1) if y.size != 1 else X.reshape(1, -1)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise DimensionError(
                f"features {X.shape} do not match {y.shape[0]} labels")
        if y.size and (np.any(y < 0.0) or np.any(y > 1.0) or not np.all(np.isfinite(y))):
            raise ValueError("labels must lie in [0, 1]")
        ids = self.ids
        if ids is None:
            ids = np.arange(y.shape[0], dtype=np.int64)
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        if ids.shape[0] != y.shape[0]:
            raise DimensionError("ids must have one entry per sample")
        for arr in (X, y, ids):
            arr.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return self.labels.shape[0]

    def subset(self, index) -> "LabeledSet":
        index = np.asarray(index)
        return LabeledSet(self.features[index], self.labels[index], self.ids[index])

    @staticmethod
    def concat(parts: Sequence["LabeledSet"]) -> "LabeledSet":
        parts = [p for p in parts if len(p)]
        if not parts:
            raise EmptyDatasetError("nothing to concatenate")
        return LabeledSet(np.concatenate([p.features for p in parts]),
                          np.concatenate([p.labels for p in parts]),
                          np.concatenate([p.ids for p in parts]))


def _as_params(spec: MlpSpec, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (spec.n_params,):
        raise DimensionError(
            f"expected {spec.n_params} parameters, got shape {theta.shape}")
    return theta


def unflatten(spec: MlpSpec, theta) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Split a flat vector into per-layer ``(W, b)`` views."""
    theta = _as_params(spec, theta)
    layers = []
    offset = 0
    for fan_in, fan_out in spec.layer_shapes():
        W = theta[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = theta[offset:offset + fan_out]
        offset += fan_out
        layers.append((W, b))
    return layers


def flatten(layers: Sequence[Tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    parts = []
    for W, b in layers:
        parts.append(np.asarray(W, dtype=np.float64).reshape(-1))
        parts.append(np.asarray(b, dtype=np.float64).reshape(-1))
    return np.concatenate(parts)


def init_model(spec: MlpSpec, seed: int) -> np.ndarray:
    """Glorot-uniform weights, zero biases, drawn from PCG64 seeded with ``seed``."""
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    layers = []
    for fan_in, fan_out in spec.layer_shapes():
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append((rng.uniform(-limit, limit, size=(fan_in, fan_out)),
                       np.zeros(fan_out)))
    return flatten(layers)


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _act_grad(name, z, a):
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    return 1.0 - a * a


def _check_features(spec: MlpSpec, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise DimensionError(
            f"model expects {spec.input_dim} features, got shape {X.shape}")
    return X


def _forward(spec: MlpSpec, layers, X):
    acts = [X]
    pre = []
    a = X
    last = len(layers) - 1
    for i, (W, b) in enumerate(layers):
        z = a @ W + b
        pre.append(z)
        a = z if i == last else _act(spec.activation, z)
        acts.append(a)
    return pre, acts


def predict_batch(spec: MlpSpec, theta, X) -> np.ndarray:
    X = _check_features(spec, X)
    _, acts = _forward(spec, unflatten(spec, theta), X)
    return acts[-1][:, 0]


def predict(spec: MlpSpec, theta, x) -> float:
    """Forward pass for a single feature row."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError("predict takes one feature row; use predict_batch")
    return float(predict_batch(spec, theta, x)[0])


def mse_loss(spec: MlpSpec, theta, data: LabeledSet) -> float:
    if len(data) == 0:
        raise EmptyDatasetError("MSE of an empty dataset is undefined")
    r = predict_batch(spec, theta, data.features) - data.labels
    return float(np.mean(r * r))


def _backward(spec, layers, pre, acts, dout):
    """Backpropagate ``dout`` (n x 1) and return per-layer deltas at pre-activations."""
    deltas = [None] * len(layers)
    delta = dout
    for i in range(len(layers) - 1, -1, -1):
        deltas[i] = delta
        if i > 0:
            W = layers[i][0]
            delta = (delta @ W.T) * _act_grad(spec.activation, pre[i - 1], acts[i])
    return deltas


def _loss_and_grad(spec: MlpSpec, theta, X, y):
    layers = unflatten(spec, theta)
    pre, acts = _forward(spec, layers, X)
    r = acts[-1][:, 0] - y
    n = y.shape[0]
    deltas = _backward(spec, layers, pre, acts, (2.0 / n) * r[:, None])
    grads = [(acts[i].T @ d, d.sum(axis=0)) for i, d in enumerate(deltas)]
    return float(np.mean(r * r)), flatten(grads)


def grad_mse(spec: MlpSpec, theta, batch: LabeledSet) -> np.ndarray:
    """Exact gradient of :func:`mse_loss` with respect to ``theta``."""
    if len(batch) == 0:
        raise EmptyDatasetError("gradient over an empty batch")
    X = _check_features(spec, batch.features)
    return _loss_and_grad(spec, theta, X, batch.labels)[1]


def loss_and_grad(spec: MlpSpec, theta, X, y) -> Tuple[float, np.ndarray]:
    """Unchecked fast path used by the training loop."""
    return _loss_and_grad(spec, theta, X, y)


def sgd_step(theta, total_grad, lr: float) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    total_grad = np.asarray(total_grad, dtype=np.float64)
    if theta.shape != total_grad.shape:
        raise DimensionError(
            f"parameter shape {theta.shape} != gradient shape {total_grad.shape}")
    if not lr >= 0:
        raise ValueError("learning rate must be non-negative")
    return theta - lr * total_grad


def fisher_diagonal(spec: MlpSpec, theta, data: LabeledSet) -> np.ndarray:
    """Empirical Fisher diagonal at ``theta``.

    Per-sample loss is ``(yhat - y)**2``; the result is the mean over samples
    of the squared per-sample gradient. Rows are put in a canonical order
    first so the value depends only on the multiset of samples.
    """
    if len(data) == 0:
        raise EmptyDatasetError("Fisher of an empty dataset is undefined")
    X = _check_features(spec, data.features)
    y = data.labels
    order = np.lexsort((y,) + tuple(X[:, j] for j in range(X.shape[1] - 1, -1, -1)))
    X, y = X[order], y[order]
    layers = unflatten(spec, theta)
    pre, acts = _forward(spec, layers, X)
    r = acts[-1][:, 0] - y
    deltas = _backward(spec, layers, pre, acts, 2.0 * r[:, None])
    n = y.shape[0]
    # sum_n (a_ni * d_nj)^2 == (a^2)^T (d^2)
    sq = [((acts[i] ** 2).T @ d ** 2 / n, (d ** 2).sum(axis=0) / n)
          for i, d in enumerate(deltas)]
    return flatten(sq)

