"""One-hidden-layer ReLU regression network over flat parameter vectors.

Weights and biases for a model live in a single float64 array so that the
federated machinery (deltas, clipping, noise, cosine similarity, weighted
averaging) can treat any model as a plain vector.  Layout::

    W1 (hidden x input, row-major) | b1 (hidden) | W2 (hidden) | b2

Batches are passed as a feature matrix ``x`` of shape (n, input_dim) and a
target vector ``y`` of shape (n,).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _backend


@dataclass(frozen=True)
class MLPShape:
    input_dim: int = 5
    hidden_dim: int = 40
    output_dim: int = 1
    activation: str = "relu"

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden_dim < 1:
            raise ValueError(f"input_dim and hidden_dim must be >= 1, got {self.input_dim}, {self.hidden_dim}")
        if self.output_dim != 1:
            raise ValueError("only a single regression output is supported")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def param_count(self) -> int:
        return (self.input_dim + 1) * self.hidden_dim + (self.hidden_dim + 1) * self.output_dim

    def split(self, params: np.ndarray):
        """Views ``(W1, b1, W2, b2)`` into a flat parameter vector."""
        check_params(params, self)
        k = self.hidden_dim * self.input_dim
        h = self.hidden_dim
        return (
            params[:k].reshape(h, self.input_dim),
            params[k:k + h],
            params[k + h:k + 2 * h],
            params[k + 2 * h:],
        )


GradFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def check_params(params: np.ndarray, shape: MLPShape) -> None:
    if params.ndim != 1 or params.shape[0] != shape.param_count:
        raise ValueError(f"parameter vector has length {params.shape}, expected {shape.param_count}")


def _as_batch(x, y, shape: MLPShape):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != shape.input_dim:
        raise ValueError(f"feature matrix has shape {x.shape}, expected (n, {shape.input_dim})")
    if y is not None:
        y = np.ascontiguousarray(y, dtype=np.float64).reshape(-1)
        if y.shape[0] != x.shape[0]:
            raise ValueError(f"{x.shape[0]} feature rows but {y.shape[0]} targets")
        if x.shape[0] == 0:
            raise ValueError("empty batch")
    return x, y


def init_params(shape: MLPShape, rng: np.random.Generator) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights per layer, zero biases."""
    params = np.zeros(shape.param_count)
    W1, _, W2, _ = shape.split(params)
    lim1 = 1.0 / np.sqrt(shape.input_dim)
    lim2 = 1.0 / np.sqrt(shape.hidden_dim)
    W1[:] = rng.uniform(-lim1, lim1, size=W1.shape)
    W2[:] = rng.uniform(-lim2, lim2, size=W2.shape)
    return params


def predict(params: np.ndarray, shape: MLPShape, x) -> np.ndarray:
    """Network outputs for every row of ``x``."""
    check_params(params, shape)
    x, _ = _as_batch(x, None, shape)
    return _backend.kernels.forward_batch(params, shape.input_dim, shape.hidden_dim, x)


def forward(params: np.ndarray, shape: MLPShape, x) -> float:
    """Output for a single feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("forward takes one feature vector; use predict for batches")
    return float(predict(params, shape, x)[0])


def mse_loss(params: np.ndarray, shape: MLPShape, x, y) -> float:
    check_params(params, shape)
    x, y = _as_batch(x, y, shape)
    r = predict(params, shape, x) - y
    return float(r @ r) / r.shape[0]


def grad_mse(params: np.ndarray, shape: MLPShape, x, y) -> np.ndarray:
    """Backpropagated gradient of :func:`mse_loss` over the batch."""
    check_params(params, shape)
    x, y = _as_batch(x, y, shape)
    _, grad = _backend.kernels.loss_and_grad(params, shape.input_dim, shape.hidden_dim, x, y)
    return grad


def grad_ditto(v: np.ndarray, w_global: np.ndarray, shape: MLPShape, x, y, mu: float) -> np.ndarray:
    """Gradient of ``F(v) + mu/2 * ||v - w_global||^2``."""
    check_params(w_global, shape)
    if mu < 0:
        raise ValueError(f"mu must be >= 0, got {mu}")
    return grad_mse(v, shape, x, y) + mu * (v - w_global)


def sgd_epochs(
    start: np.ndarray,
    shape: MLPShape,
    x,
    y,
    epochs: int,
    batch_size: int,
    lr: float,
    rng: np.random.Generator,
    *,
    mu: float = 0.0,
    anchor: np.ndarray | None = None,
    grad_fn: GradFn | None = None,
) -> np.ndarray:
    """Mini-batch SGD; returns a new vector, ``start`` is left untouched.

    Data is reshuffled from ``rng`` every epoch and cut into consecutive
    batches of ``batch_size`` (the last one may be short).  By default the
    step uses the MSE gradient, plus ``mu * (p - anchor)`` when ``mu > 0``;
    the whole epoch then runs inside the kernel core.  A custom
    ``grad_fn(p, xb, yb)`` replaces that gradient and runs in Python.
    """
    if epochs < 0 or batch_size < 1 or lr < 0:
        raise ValueError(f"invalid SGD settings: epochs={epochs}, batch_size={batch_size}, lr={lr}")
    check_params(start, shape)
    x, y = _as_batch(x, y, shape)
    params = np.array(start, dtype=np.float64, copy=True)
    n = x.shape[0]
    if mu != 0.0:
        if anchor is None:
            raise ValueError("mu > 0 requires an anchor vector")
        check_params(anchor, shape)
        anchor = np.ascontiguousarray(anchor, dtype=np.float64)

    for _ in range(epochs):
        order = rng.permutation(n).astype(np.int64)
        if grad_fn is None:
            _backend.kernels.sgd_epoch(
                params, shape.input_dim, shape.hidden_dim, x, y, order, batch_size, lr, mu, anchor
            )
        else:
            for lo in range(0, n, batch_size):
                idx = order[lo:lo + batch_size]
                params -= lr * grad_fn(params, x[idx], y[idx])
    return params
