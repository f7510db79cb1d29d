"""Pure-numpy kernels for the one-hidden-layer regression network.

Parameter layout (flat, float64):
    W1 (hidden x input, row-major) | b1 (hidden) | W2 (hidden) | b2 (1)

Every function here has a twin in ``_kernels.pyx`` with the same signature
and semantics; ``fedmeter._backend`` picks one at import time.
"""
import numpy as np


def _unpack(params, n_in, n_hid):
    k = n_hid * n_in
    W1 = params[:k].reshape(n_hid, n_in)
    b1 = params[k:k + n_hid]
    W2 = params[k + n_hid:k + 2 * n_hid]
    b2 = params[k + 2 * n_hid]
    return W1, b1, W2, b2


def forward_batch(params, n_in, n_hid, X):
    W1, b1, W2, b2 = _unpack(params, n_in, n_hid)
    hidden = np.maximum(X @ W1.T + b1, 0.0)
    return hidden @ W2 + b2


def loss_and_grad(params, n_in, n_hid, X, y):
    """Mean squared error over (X, y) and its gradient w.r.t. ``params``."""
    W1, b1, W2, b2 = _unpack(params, n_in, n_hid)
    n = X.shape[0]
    z = X @ W1.T + b1
    h = np.maximum(z, 0.0)
    r = h @ W2 + b2 - y
    loss = float(r @ r) / n

    g_out = (2.0 / n) * r
    grad = np.empty_like(params)
    k = n_hid * n_in
    g_h = np.outer(g_out, W2) * (z > 0.0)
    grad[:k] = (g_h.T @ X).ravel()
    grad[k:k + n_hid] = g_h.sum(axis=0)
    grad[k + n_hid:k + 2 * n_hid] = h.T @ g_out
    grad[k + 2 * n_hid] = g_out.sum()
    return loss, grad


def sgd_epoch(params, n_in, n_hid, X, y, order, batch_size, lr, mu, anchor):
    """One pass over ``order`` in mini-batches, updating ``params`` in place.

    With ``mu > 0`` each step uses the proximal gradient
    ``grad_mse(p) + mu * (p - anchor)``.
    """
    n = order.shape[0]
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        _, grad = loss_and_grad(params, n_in, n_hid, X[idx], y[idx])
        if mu != 0.0:
            grad += mu * (params - anchor)
        params -= lr * grad
