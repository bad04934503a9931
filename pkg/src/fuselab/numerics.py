"""Dense differentiable kernels with explicit forward and backward passes.

Everything here is a pure function over numpy arrays. The default working
precision is float32; the gradient checker promotes to float64, and every
kernel honors the dtype of its operands so the same code paths run in either
precision. Shape and domain violations raise instead of broadcasting.
"""

import math
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from . import backend
from .errors import DimensionError, DomainError, EvaluationError

DTYPE = np.float32
GRAD_DTYPE = np.float64


def require_matrix(a: np.ndarray, name: str) -> np.ndarray:
    """Validate a 2-D array of finite reals; returns it unchanged."""
    a = np.asarray(a)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise DomainError(f"{name} contains non-finite entries")
    return a


class AttentionOutput(NamedTuple):
    output: np.ndarray   # (n_queries, d_v)
    weights: np.ndarray  # (n_queries, n_keys), rows sum to 1


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = require_matrix(a, "a")
    b = require_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    return backend.matmul(a, b)


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Affine map out[i] = x[i] @ w + b; weights are (d_in, d_out)."""
    x = require_matrix(x, "x")
    w = require_matrix(w, "w")
    b = np.asarray(b)
    if x.shape[1] != w.shape[0]:
        raise DimensionError(f"linear: x {x.shape} does not conform to w {w.shape}")
    if b.reshape(-1).shape[0] != w.shape[1]:
        raise DimensionError(f"linear: bias length {b.size} != output dim {w.shape[1]}")
    return backend.matmul(x, w) + b.reshape(1, -1)


def linear_backward(x: np.ndarray, w: np.ndarray, d_out: np.ndarray):
    """Gradients of linear() w.r.t. x, w, b given d(out). db keeps shape (1, d_out)."""
    dx = backend.matmul_a_bt(d_out, w)
    dw = backend.matmul_at_b(x, d_out)
    db = d_out.sum(axis=0, keepdims=True)
    return dx, dw, db


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilized by row-max subtraction."""
    x = require_matrix(x, "x")
    return backend.softmax_rows(x)


def softmax_rows_backward(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Backward of softmax_rows: y is the forward output."""
    return backend.softmax_rows_backward(y, dy)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, d_out: np.ndarray) -> np.ndarray:
    """x is the pre-activation input of the forward pass."""
    return d_out * (x > 0)


def scaled_dot_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, d_k: int) -> AttentionOutput:
    """Single attention map: softmax(q k^T / sqrt(d_k)) v.

    q: (n_queries, d_k), k: (n_keys, d_k), v: (n_keys, d_v).
    """
    q = require_matrix(q, "q")
    k = require_matrix(k, "k")
    v = require_matrix(v, "v")
    if d_k <= 0:
        raise DomainError(f"d_k must be positive, got {d_k}")
    if q.shape[1] != d_k or k.shape[1] != d_k:
        raise DimensionError(
            f"q and k must have {d_k} columns, got q {q.shape}, k {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise DimensionError(f"k rows {k.shape} != v rows {v.shape}")
    weights, out = backend.attention_forward(
        q[np.newaxis], k[np.newaxis], v[np.newaxis], 1.0 / math.sqrt(d_k))
    return AttentionOutput(output=out[0], weights=weights[0])


def scaled_dot_attention_backward(q, k, v, weights, d_output, d_k):
    """Gradients of scaled_dot_attention w.r.t. q, k, v.

    `weights` is the forward attention map; `d_output` the upstream gradient.
    """
    dq, dk, dv = backend.attention_backward(
        q[np.newaxis], k[np.newaxis], v[np.newaxis],
        weights[np.newaxis], d_output[np.newaxis], 1.0 / math.sqrt(d_k))
    return dq[0], dk[0], dv[0]


def grad_check(
    f: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    theta: np.ndarray,
    eps: float = 1e-4,
    indices: Optional[Sequence[int]] = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    For each checked coordinate i:

        numeric_i = (f(theta + eps e_i) - f(theta - eps e_i)) / (2 eps)
        err_i     = |analytic_i - numeric_i| / max(|analytic_i|, |numeric_i|, 1e-8)

    Runs in float64. `indices` restricts the sweep to a coordinate subset
    (full sweep by default; large parameter vectors are usually spot-checked).
    """
    if eps <= 0:
        raise DomainError(f"eps must be positive, got {eps}")
    theta = np.asarray(theta, dtype=GRAD_DTYPE).reshape(-1).copy()
    analytic = np.asarray(grad(theta), dtype=GRAD_DTYPE).reshape(-1)
    if analytic.shape != theta.shape:
        raise DimensionError(
            f"analytic gradient shape {analytic.shape} != parameter shape {theta.shape}")
    if indices is None:
        indices = range(theta.size)
    worst = 0.0
    for i in indices:
        orig = theta[i]
        theta[i] = orig + eps
        f_plus = float(f(theta))
        theta[i] = orig - eps
        f_minus = float(f(theta))
        theta[i] = orig
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise EvaluationError(f"f is non-finite near coordinate {i}")
        numeric = (f_plus - f_minus) / (2.0 * eps)
        denom = max(abs(analytic[i]), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst
