# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled dense kernels: matmul variants, row softmax, batched attention.

Mirrors the function set of `numpy_backend`. Every entry point takes
C-contiguous float32 or float64 arrays (fused `real`) and returns arrays of
the same dtype. Matmuls accumulate in the operand precision; loops are
ordered for unit-stride access so the C compiler can vectorize them.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp

NAME = "compiled"

ctypedef fused real:
    float
    double


cdef inline object _empty(tuple shape, real sample):
    if real is float:
        return np.empty(shape, dtype=np.float32)
    return np.empty(shape, dtype=np.float64)


cdef inline object _zeros(tuple shape, real sample):
    if real is float:
        return np.zeros(shape, dtype=np.float32)
    return np.zeros(shape, dtype=np.float64)


def matmul(real[:, ::1] a, real[:, ::1] b):
    cdef Py_ssize_t m = a.shape[0], kk = a.shape[1], n = b.shape[1]
    out_np = _zeros((m, n), <real>0)
    cdef real[:, ::1] out = out_np
    cdef Py_ssize_t i, j, p
    cdef real aip
    for i in range(m):
        for p in range(kk):
            aip = a[i, p]
            for j in range(n):
                out[i, j] += aip * b[p, j]
    return out_np


def matmul_at_b(real[:, ::1] a, real[:, ::1] b):
    # a: (k, m), b: (k, n) -> a.T @ b: (m, n)
    cdef Py_ssize_t kk = a.shape[0], m = a.shape[1], n = b.shape[1]
    out_np = _zeros((m, n), <real>0)
    cdef real[:, ::1] out = out_np
    cdef Py_ssize_t i, j, p
    cdef real api
    for p in range(kk):
        for i in range(m):
            api = a[p, i]
            for j in range(n):
                out[i, j] += api * b[p, j]
    return out_np


def matmul_a_bt(real[:, ::1] a, real[:, ::1] b):
    # a: (m, k), b: (n, k) -> a @ b.T: (m, n); row-row dots are unit stride.
    cdef Py_ssize_t m = a.shape[0], kk = a.shape[1], n = b.shape[0]
    out_np = _empty((m, n), <real>0)
    cdef real[:, ::1] out = out_np
    cdef Py_ssize_t i, j, p
    cdef real s
    for i in range(m):
        for j in range(n):
            s = 0
            for p in range(kk):
                s += a[i, p] * b[j, p]
            out[i, j] = s
    return out_np


cdef inline void _softmax_row(real* x, real* y, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t j
    cdef real mx = x[0]
    cdef real total = 0
    for j in range(1, n):
        if x[j] > mx:
            mx = x[j]
    for j in range(n):
        y[j] = <real>exp(x[j] - mx)
        total += y[j]
    for j in range(n):
        y[j] /= total


def softmax_rows(real[:, ::1] x):
    cdef Py_ssize_t m = x.shape[0], n = x.shape[1]
    out_np = _empty((m, n), <real>0)
    cdef real[:, ::1] out = out_np
    cdef Py_ssize_t i
    for i in range(m):
        _softmax_row(&x[i, 0], &out[i, 0], n)
    return out_np


def softmax_rows_backward(real[:, ::1] y, real[:, ::1] dy):
    cdef Py_ssize_t m = y.shape[0], n = y.shape[1]
    out_np = _empty((m, n), <real>0)
    cdef real[:, ::1] out = out_np
    cdef Py_ssize_t i, j
    cdef real dot
    for i in range(m):
        dot = 0
        for j in range(n):
            dot += dy[i, j] * y[i, j]
        for j in range(n):
            out[i, j] = y[i, j] * (dy[i, j] - dot)
    return out_np


def attention_forward(real[:, :, ::1] q, real[:, :, ::1] k, real[:, :, ::1] v,
                      double scale):
    """Batched attention: q (B,Tq,D), k (B,Tk,D), v (B,Tk,Dv)."""
    cdef Py_ssize_t bs = q.shape[0], tq = q.shape[1], d = q.shape[2]
    cdef Py_ssize_t tk = k.shape[1], dv = v.shape[2]
    w_np = _empty((bs, tq, tk), <real>0)
    out_np = _zeros((bs, tq, dv), <real>0)
    cdef real[:, :, ::1] w = w_np
    cdef real[:, :, ::1] out = out_np
    cdef Py_ssize_t b, i, j, p
    cdef real s, wij
    cdef real sc = <real>scale
    for b in range(bs):
        for i in range(tq):
            for j in range(tk):
                s = 0
                for p in range(d):
                    s += q[b, i, p] * k[b, j, p]
                w[b, i, j] = s * sc
            _softmax_row(&w[b, i, 0], &w[b, i, 0], tk)
            for j in range(tk):
                wij = w[b, i, j]
                for p in range(dv):
                    out[b, i, p] += wij * v[b, j, p]
    return w_np, out_np


def attention_backward(real[:, :, ::1] q, real[:, :, ::1] k, real[:, :, ::1] v,
                       real[:, :, ::1] weights, real[:, :, ::1] d_out,
                       double scale):
    cdef Py_ssize_t bs = q.shape[0], tq = q.shape[1], d = q.shape[2]
    cdef Py_ssize_t tk = k.shape[1], dv = v.shape[2]
    dq_np = _zeros((bs, tq, d), <real>0)
    dk_np = _zeros((bs, tk, d), <real>0)
    dv_np = _zeros((bs, tk, dv), <real>0)
    da_np = _empty((tq, tk), <real>0)
    cdef real[:, :, ::1] dq = dq_np
    cdef real[:, :, ::1] dk = dk_np
    cdef real[:, :, ::1] dvv = dv_np
    cdef real[:, ::1] da = da_np
    cdef Py_ssize_t b, i, j, p
    cdef real s, dot, dsij
    cdef real sc = <real>scale
    for b in range(bs):
        # dv += W^T dOut; dA = dOut V^T
        for i in range(tq):
            for j in range(tk):
                s = 0
                for p in range(dv):
                    s += d_out[b, i, p] * v[b, j, p]
                da[i, j] = s
                for p in range(dv):
                    dvv[b, j, p] += weights[b, i, j] * d_out[b, i, p]
        # dS = W * (dA - <dA, W>_row), then dQ = dS K * scale, dK = dS^T Q * scale
        for i in range(tq):
            dot = 0
            for j in range(tk):
                dot += da[i, j] * weights[b, i, j]
            for j in range(tk):
                dsij = weights[b, i, j] * (da[i, j] - dot) * sc
                for p in range(d):
                    dq[b, i, p] += dsij * k[b, j, p]
                    dk[b, j, p] += dsij * q[b, i, p]
    return dq_np, dk_np, dv_np
