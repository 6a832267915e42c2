# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel backend.

Twin of ``imbarb._kernels.numpy_backend`` with identical signatures; matmuls
go through BLAS dgemm, the elementwise work is fused C loops.  Float64,
C-contiguous arrays only.
"""

from libc.math cimport floor, sqrt
from scipy.linalg.cython_blas cimport dgemm

import numpy as np

NAME = "cython"

cdef char _N = b'N'
cdef char _T = b'T'


cdef void _mm_nn(double[:, ::1] a, double[:, ::1] b, double[:, ::1] c) noexcept nogil:
    # row-major c(m,n) = a(m,k) @ b(k,n), computed as column-major c^T = b^T a^T
    cdef int m = a.shape[0], k = a.shape[1], n = b.shape[1]
    cdef double one = 1.0, zero = 0.0
    dgemm(&_N, &_N, &n, &m, &k, &one, &b[0, 0], &n, &a[0, 0], &k, &zero, &c[0, 0], &n)


cdef void _mm_tn(double[:, ::1] a, double[:, ::1] b, double[:, ::1] c) noexcept nogil:
    # row-major c(m,n) = a(k,m)^T @ b(k,n)
    cdef int k = a.shape[0], m = a.shape[1], n = b.shape[1]
    cdef double one = 1.0, zero = 0.0
    dgemm(&_N, &_T, &n, &m, &k, &one, &b[0, 0], &n, &a[0, 0], &m, &zero, &c[0, 0], &n)


cdef void _mm_nt(double[:, ::1] a, double[:, ::1] b, double[:, ::1] c) noexcept nogil:
    # row-major c(m,n) = a(m,k) @ b(n,k)^T
    cdef int m = a.shape[0], k = a.shape[1], n = b.shape[0]
    cdef double one = 1.0, zero = 0.0
    dgemm(&_T, &_N, &n, &m, &k, &one, &b[0, 0], &k, &a[0, 0], &k, &zero, &c[0, 0], &n)


cdef void _add_bias_relu(double[:, ::1] a, double[::1] bias, bint relu) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double v
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            v = a[i, j] + bias[j]
            if relu and v < 0.0:
                v = 0.0
            a[i, j] = v


def dense_forward(x, weights, biases):
    """Forward pass: x (batch, in_dim) -> (batch, out_dim)."""
    cdef Py_ssize_t last = len(weights) - 1
    cdef Py_ssize_t l
    a = x
    for l in range(len(weights)):
        w = weights[l]
        nxt = np.empty((a.shape[0], w.shape[1]))
        if a.shape[0] > 0:
            _mm_nn(a, w, nxt)
        _add_bias_relu(nxt, biases[l], l != last)
        a = nxt
    return a


def dense_forward_cached(x, weights, biases):
    """Forward pass keeping post-activation values for the backward pass."""
    cdef Py_ssize_t last = len(weights) - 1
    cdef Py_ssize_t l
    acts = [x]
    a = x
    for l in range(len(weights)):
        w = weights[l]
        nxt = np.empty((a.shape[0], w.shape[1]))
        if a.shape[0] > 0:
            _mm_nn(a, w, nxt)
        _add_bias_relu(nxt, biases[l], l != last)
        acts.append(nxt)
        a = nxt
    return a, acts


cdef void _relu_mask(double[:, ::1] d, double[:, ::1] act) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(d.shape[0]):
        for j in range(d.shape[1]):
            if act[i, j] <= 0.0:
                d[i, j] = 0.0


cdef void _col_sums(double[:, ::1] a, double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, j
    for j in range(a.shape[1]):
        out[j] = 0.0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            out[j] += a[i, j]


def dense_backward(acts, weights, upstream):
    """Gradients of sum(out * upstream) w.r.t. every weight and bias."""
    cdef Py_ssize_t n = len(weights)
    cdef Py_ssize_t l
    dws = [None] * n
    dbs = [None] * n
    d = np.ascontiguousarray(upstream)
    for l in range(n - 1, -1, -1):
        a_prev = acts[l]
        dw = np.empty_like(weights[l])
        if d.shape[0] > 0:
            _mm_tn(a_prev, d, dw)
        else:
            dw[:] = 0.0
        db = np.empty(d.shape[1])
        _col_sums(d, db)
        dws[l] = dw
        dbs[l] = db
        if l > 0:
            d_prev = np.empty((d.shape[0], weights[l].shape[0]))
            if d.shape[0] > 0:
                _mm_nt(d, weights[l], d_prev)
            _relu_mask(d_prev, a_prev)
            d = d_prev
    return dws, dbs


def adam_step(double[::1] param, double[::1] grad, double[::1] m, double[::1] v,
              double lr, double beta1, double beta2, double eps, double c1, double c2):
    """One Adam update, in place on flat float64 views."""
    cdef Py_ssize_t i
    cdef double g
    with nogil:
        for i in range(param.shape[0]):
            g = grad[i]
            m[i] = beta1 * m[i] + (1.0 - beta1) * g
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
            param[i] -= lr * (m[i] / c1) / (sqrt(v[i] / c2) + eps)


def categorical_project(double[:, ::1] probs, double[::1] rewards,
                        double[::1] gammas, double[::1] atoms):
    """Project shifted/scaled atom masses back onto the fixed atom grid."""
    cdef Py_ssize_t nb = probs.shape[0], n = atoms.shape[0]
    cdef Py_ssize_t b, j
    cdef double lo_v, hi_v, delta, tz, pos, w_hi
    cdef long lo
    out_arr = np.zeros((nb, n))
    cdef double[:, ::1] out = out_arr
    if n == 1:
        for b in range(nb):
            for j in range(probs.shape[1]):
                out[b, 0] += probs[b, j]
        return out_arr
    lo_v = atoms[0]
    hi_v = atoms[n - 1]
    delta = atoms[1] - atoms[0]
    with nogil:
        for b in range(nb):
            for j in range(n):
                tz = rewards[b] + gammas[b] * atoms[j]
                if tz < lo_v:
                    tz = lo_v
                elif tz > hi_v:
                    tz = hi_v
                pos = (tz - lo_v) / delta
                if pos < 0.0:
                    pos = 0.0
                elif pos > n - 1.0:
                    pos = n - 1.0
                lo = <long>floor(pos)
                if lo > n - 2:
                    lo = n - 2
                w_hi = pos - lo
                out[b, lo] += probs[b, j] * (1.0 - w_hi)
                out[b, lo + 1] += probs[b, j] * w_hi
    return out_arr
