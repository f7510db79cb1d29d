# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the one-hidden-layer regression network.

Same layout and semantics as ``fedmeter._fallback``.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef void _batch_grad(const double[::1] p, int n_in, int n_hid,
                      const double[:, ::1] X, const double[::1] y,
                      const cnp.int64_t[::1] idx, Py_ssize_t lo, Py_ssize_t hi,
                      double[::1] z, double[::1] grad, double* loss) noexcept nogil:
    cdef Py_ssize_t s, j, f, row
    cdef Py_ssize_t kW = n_hid * n_in
    cdef Py_ssize_t kb1 = kW
    cdef Py_ssize_t kW2 = kW + n_hid
    cdef Py_ssize_t kb2 = kW + 2 * n_hid
    cdef Py_ssize_t nparam = kb2 + 1
    cdef double inv_n = 1.0 / (hi - lo)
    cdef double out, r, g_out, g_h, acc
    cdef double total = 0.0

    for j in range(nparam):
        grad[j] = 0.0

    for s in range(lo, hi):
        row = idx[s]
        out = p[kb2]
        for j in range(n_hid):
            acc = p[kb1 + j]
            for f in range(n_in):
                acc = acc + p[j * n_in + f] * X[row, f]
            z[j] = acc
            if acc > 0.0:
                out = out + p[kW2 + j] * acc
        r = out - y[row]
        total = total + r * r
        g_out = 2.0 * inv_n * r
        grad[kb2] += g_out
        for j in range(n_hid):
            if z[j] > 0.0:
                grad[kW2 + j] += z[j] * g_out
                g_h = g_out * p[kW2 + j]
                grad[kb1 + j] += g_h
                for f in range(n_in):
                    grad[j * n_in + f] += g_h * X[row, f]
    loss[0] = total * inv_n


def forward_batch(const double[::1] params, int n_in, int n_hid, const double[:, ::1] X):
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t s, j, f
    cdef Py_ssize_t kW = n_hid * n_in
    cdef Py_ssize_t kW2 = kW + n_hid
    cdef Py_ssize_t kb2 = kW + 2 * n_hid
    cdef double acc, out
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] res = out_arr
    with nogil:
        for s in range(n):
            out = params[kb2]
            for j in range(n_hid):
                acc = params[kW + j]
                for f in range(n_in):
                    acc = acc + params[j * n_in + f] * X[s, f]
                if acc > 0.0:
                    out = out + params[kW2 + j] * acc
            res[s] = out
    return out_arr


def loss_and_grad(const double[::1] params, int n_in, int n_hid,
                  const double[:, ::1] X, const double[::1] y):
    cdef Py_ssize_t n = X.shape[0]
    cdef double loss = 0.0
    grad_arr = np.empty(params.shape[0], dtype=np.float64)
    z_arr = np.empty(n_hid, dtype=np.float64)
    idx_arr = np.arange(n, dtype=np.int64)
    cdef cnp.int64_t[::1] idx = idx_arr
    cdef double[::1] g = grad_arr
    cdef double[::1] z = z_arr
    with nogil:
        _batch_grad(params, n_in, n_hid, X, y, idx, 0, n, z, g, &loss)
    return loss, grad_arr


def sgd_epoch(double[::1] params, int n_in, int n_hid,
              const double[:, ::1] X, const double[::1] y, const cnp.int64_t[::1] order,
              Py_ssize_t batch_size, double lr, double mu, anchor):
    cdef Py_ssize_t n = order.shape[0]
    cdef Py_ssize_t nparam = params.shape[0]
    cdef Py_ssize_t lo, hi, j
    cdef double loss = 0.0
    cdef double[::1] w
    grad_arr = np.empty(nparam, dtype=np.float64)
    z_arr = np.empty(n_hid, dtype=np.float64)
    cdef double[::1] g = grad_arr
    cdef double[::1] z = z_arr
    cdef bint prox = mu != 0.0
    if prox:
        w = anchor
    with nogil:
        lo = 0
        while lo < n:
            hi = lo + batch_size
            if hi > n:
                hi = n
            _batch_grad(params, n_in, n_hid, X, y, order, lo, hi, z, g, &loss)
            if prox:
                for j in range(nparam):
                    params[j] -= lr * (g[j] + mu * (params[j] - w[j]))
            else:
                for j in range(nparam):
                    params[j] -= lr * g[j]
            lo = hi
