"""Numpy implementations of the kernel set.

This is the fallback backend and the reference the compiled kernels are
checked against. All functions preserve the input dtype (float32 or float64)
and assume validated, conforming shapes; shape/domain checks live one layer
up in `fuselab.numerics`.
"""

import numpy as np

NAME = "numpy"


def matmul(a, b):
    return a @ b


def matmul_at_b(a, b):
    """a.T @ b without materializing the transpose."""
    return a.T @ b


def matmul_a_bt(a, b):
    """a @ b.T without materializing the transpose."""
    return a @ b.T


def softmax_rows(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(y, dy):
    # dx = y * (dy - <dy, y>_row), the softmax Jacobian-vector product.
    return y * (dy - (dy * y).sum(axis=1, keepdims=True))


def attention_forward(q, k, v, scale):
    """Batched scaled dot-product attention.

    q: (B, Tq, D), k: (B, Tk, D), v: (B, Tk, Dv).
    Returns (weights (B, Tq, Tk), out (B, Tq, Dv)).
    """
    scores = np.matmul(q, k.transpose(0, 2, 1)) * scale
    scores -= scores.max(axis=2, keepdims=True)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=2, keepdims=True)
    out = np.matmul(scores, v)
    return scores, out


def attention_backward(q, k, v, weights, d_out, scale):
    """Gradients of attention_forward w.r.t. q, k, v given d(out)."""
    dv = np.matmul(weights.transpose(0, 2, 1), d_out)
    da = np.matmul(d_out, v.transpose(0, 2, 1))
    ds = weights * (da - (da * weights).sum(axis=2, keepdims=True))
    dq = np.matmul(ds, k) * scale
    dk = np.matmul(ds.transpose(0, 2, 1), q) * scale
    return dq, dk, dv
