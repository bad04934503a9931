"""The three fusion architectures and their shared classification head.

All variants project a 768-d text embedding and a 384-d image embedding to
256-d, combine them into a 512-d fused representation, and classify it with a
two-layer head (512 -> 256 -> 3, rectified-linear between, dropout before each
affine layer in training mode).

Fusion variants:

* basic           - plain concatenation [t, v]
* self-attention  - t and v become a two-token sequence; one scaled
                    dot-product attention map mixes them, and the attended
                    tokens are flattened back to 512
* dual-attention  - each modality is first adjusted by cross-attending over
                    the other (with one token per modality the cross step
                    reduces analytically to t' = v @ W_vv, v' = t @ W_vt;
                    it is still computed through the attention kernel so the
                    identity is observable rather than assumed), then the
                    adjusted pair goes through its own self-attention block

Backward passes are hand-derived and exercised against the finite-difference
checker; `model_grad_check` is the entry point the CLI and tests share.
"""

import math
import struct
from dataclasses import dataclass
from typing import Dict, NamedTuple, Optional, Tuple

import numpy as np

from . import backend, numerics
from .data import IMAGE_DIM, TEXT_DIM, EmbeddingRecord
from .errors import (DimensionError, DomainError, EvaluationError, FormatError,
                     InputError, UnsupportedVersionError)

MODEL_DIM = 256
FUSED_DIM = 2 * MODEL_DIM
HIDDEN_DIM = 256
N_CLASSES = 3
ATTN_SCALE = 1.0 / math.sqrt(MODEL_DIM)  # d_k = d_model = 256


class FusionKind:
    BASIC = "basic"
    SELF_ATTENTION = "self-attn"
    DUAL_ATTENTION = "dual-attn"
    ALL = (BASIC, SELF_ATTENTION, DUAL_ATTENTION)


_KIND_CODES = {FusionKind.BASIC: 0, FusionKind.SELF_ATTENTION: 1, FusionKind.DUAL_ATTENTION: 2}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}

_PROJ_BLOCKS = [
    ("text_w", (TEXT_DIM, MODEL_DIM)),
    ("text_b", (1, MODEL_DIM)),
    ("vis_w", (IMAGE_DIM, MODEL_DIM)),
    ("vis_b", (1, MODEL_DIM)),
]
_CROSS_BLOCKS = [
    ("cross_t_wq", (MODEL_DIM, MODEL_DIM)),
    ("cross_t_wk", (MODEL_DIM, MODEL_DIM)),
    ("cross_t_wv", (MODEL_DIM, MODEL_DIM)),
    ("cross_v_wq", (MODEL_DIM, MODEL_DIM)),
    ("cross_v_wk", (MODEL_DIM, MODEL_DIM)),
    ("cross_v_wv", (MODEL_DIM, MODEL_DIM)),
]
_SELF_BLOCKS = [
    ("self_wq", (MODEL_DIM, MODEL_DIM)),
    ("self_wk", (MODEL_DIM, MODEL_DIM)),
    ("self_wv", (MODEL_DIM, MODEL_DIM)),
]
_HEAD_BLOCKS = [
    ("fc1_w", (FUSED_DIM, HIDDEN_DIM)),
    ("fc1_b", (1, HIDDEN_DIM)),
    ("fc2_w", (HIDDEN_DIM, N_CLASSES)),
    ("fc2_b", (1, N_CLASSES)),
]


def param_layout(kind: str):
    """Canonical (name, shape) list for a fusion kind, in dataflow order."""
    if kind not in FusionKind.ALL:
        raise InputError(f"unknown fusion kind {kind!r}")
    layout = list(_PROJ_BLOCKS)
    if kind == FusionKind.DUAL_ATTENTION:
        layout += _CROSS_BLOCKS
    if kind != FusionKind.BASIC:
        layout += _SELF_BLOCKS
    return layout + _HEAD_BLOCKS


class AttentionWeights(NamedTuple):
    """One attention block's projection matrices, each (256, 256)."""
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray


@dataclass
class FusionModel:
    kind: str
    params: Dict[str, np.ndarray]

    def validate(self) -> "FusionModel":
        expected = param_layout(self.kind)
        names = [n for n, _ in expected]
        if list(self.params.keys()) != names:
            raise FormatError(
                f"{self.kind} model has tensors {list(self.params)}, expected {names}")
        for name, shape in expected:
            got = self.params[name].shape
            if got != shape:
                raise FormatError(f"tensor {name}: shape {got}, expected {shape}")
            if not np.isfinite(self.params[name]).all():
                raise FormatError(f"tensor {name} contains non-finite values")
        return self

    def astype(self, dtype) -> "FusionModel":
        return FusionModel(self.kind, {k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self) -> "FusionModel":
        return FusionModel(self.kind, {k: v.copy() for k, v in self.params.items()})

    def self_attention(self) -> AttentionWeights:
        p = self.params
        return AttentionWeights(p["self_wq"], p["self_wk"], p["self_wv"])

    def cross_attention(self, modality: str) -> AttentionWeights:
        p = self.params
        return AttentionWeights(p[f"cross_{modality}_wq"],
                                p[f"cross_{modality}_wk"],
                                p[f"cross_{modality}_wv"])


def init_params(kind: str, seed: int) -> FusionModel:
    """Seed-deterministic init: weights uniform in +-sqrt(6/(fan_in+fan_out)),
    biases zero."""
    rng = np.random.default_rng(seed)
    params: Dict[str, np.ndarray] = {}
    for name, shape in param_layout(kind):
        if name.endswith("_b"):
            params[name] = np.zeros(shape, dtype=numerics.DTYPE)
        else:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-limit, limit, size=shape).astype(numerics.DTYPE)
    return FusionModel(kind, params)


# ---------------------------------------------------------------------------
# Spec-level single-sample operations
# ---------------------------------------------------------------------------

def _check_vec(x, dim: int, name: str) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 1 or x.shape[0] != dim:
        raise DimensionError(f"{name} must be a vector of length {dim}, got shape {x.shape}")
    return x


def project_text(h_cls: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """768-d encoder output -> 256-d text representation t."""
    h = _check_vec(h_cls, TEXT_DIM, "h_cls")
    return numerics.linear(h[np.newaxis], w, b)[0]


def project_visual(g_cls: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """384-d encoder output -> 256-d visual representation v."""
    g = _check_vec(g_cls, IMAGE_DIM, "g_cls")
    return numerics.linear(g[np.newaxis], w, b)[0]


def basic_fuse(t: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Concatenation: t occupies indices 0..255, v indices 256..511."""
    t = _check_vec(t, MODEL_DIM, "t")
    v = _check_vec(v, MODEL_DIM, "v")
    return np.concatenate([t, v])


def self_attention_fuse(t: np.ndarray, v: np.ndarray, attn: AttentionWeights) -> np.ndarray:
    """Stack [t; v] as a two-token sequence, attend, flatten row-major to 512."""
    t = _check_vec(t, MODEL_DIM, "t")
    v = _check_vec(v, MODEL_DIM, "v")
    tokens = np.stack([t, v])[np.newaxis]  # (1, 2, 256)
    _, _, out, _ = _token_attention_forward(tokens, attn)
    return out.reshape(FUSED_DIM)


def cross_modal_adjust(t: np.ndarray, v: np.ndarray,
                       cross_t: AttentionWeights, cross_v: AttentionWeights
                       ) -> Tuple[np.ndarray, np.ndarray]:
    """Cross-attention step of the dual model: (t', v').

    Computed through the attention kernel even though a single key makes the
    softmax weight exactly 1, so t' = v @ cross_v.w_v and v' = t @ cross_t.w_v
    hold as observable identities.
    """
    t = _check_vec(t, MODEL_DIM, "t")
    v = _check_vec(v, MODEL_DIM, "v")
    t_prime, v_prime, _ = _cross_forward(t[np.newaxis], v[np.newaxis], cross_t, cross_v)
    return t_prime[0], v_prime[0]


def dual_attention_fuse(t: np.ndarray, v: np.ndarray,
                        cross_t: AttentionWeights, cross_v: AttentionWeights,
                        attn: AttentionWeights) -> np.ndarray:
    """Cross-modal adjustment followed by self-attention over [t'; v']."""
    t_prime, v_prime = cross_modal_adjust(t, v, cross_t, cross_v)
    return self_attention_fuse(t_prime, v_prime, attn)


def classify(fused: np.ndarray, params: Dict[str, np.ndarray],
             dropout_masks: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> np.ndarray:
    """Fused 512-d representation -> 3 logits.

    `dropout_masks` are the two pre-affine masks (already scaled by
    1/(1-rate)); None means inference mode.
    """
    fused = _check_vec(fused, FUSED_DIM, "fused")
    x = fused[np.newaxis]
    m1 = m2 = None
    if dropout_masks is not None:
        m1, m2 = (np.asarray(m).reshape(1, -1) for m in dropout_masks)
    if m1 is not None:
        x = x * m1
    h = numerics.relu(numerics.linear(x, params["fc1_w"], params["fc1_b"]))
    if m2 is not None:
        h = h * m2
    return numerics.linear(h, params["fc2_w"], params["fc2_b"])[0]


def forward(model: FusionModel, record: EmbeddingRecord, mode: str = "infer",
            dropout_rate: float = 0.0, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Full pipeline for one record: class probabilities (3,)."""
    if mode not in ("train", "infer"):
        raise InputError(f"mode must be 'train' or 'infer', got {mode!r}")
    xt = _check_vec(record.text_vec, TEXT_DIM, "text_vec")[np.newaxis]
    xv = _check_vec(record.image_vec, IMAGE_DIM, "image_vec")[np.newaxis]
    train = mode == "train"
    if train and dropout_rate > 0.0 and rng is None:
        raise InputError("training-mode forward with dropout needs an rng")
    probs, _ = forward_batch(model, xt, xv, train=train,
                             dropout_rate=dropout_rate if train else 0.0, rng=rng)
    return probs[0]


# ---------------------------------------------------------------------------
# Batched forward/backward (the training path; single-sample ops wrap it)
# ---------------------------------------------------------------------------

def _project_tokens(tokens: np.ndarray, w: np.ndarray) -> np.ndarray:
    """(B, T, D) @ (D, D) via one flat matmul."""
    b, t, d = tokens.shape
    flat = backend.matmul(tokens.reshape(b * t, d), w)
    return flat.reshape(b, t, w.shape[1])


def _token_attention_forward(tokens: np.ndarray, attn: AttentionWeights):
    """Self-attention over a (B, T, 256) token stack; returns flattened (B, T*256)."""
    q = _project_tokens(tokens, attn.w_q)
    k = _project_tokens(tokens, attn.w_k)
    v = _project_tokens(tokens, attn.w_v)
    weights, attended = backend.attention_forward(q, k, v, ATTN_SCALE)
    b, t, d = tokens.shape
    return (q, k, v), weights, attended.reshape(b, t * d), attended


def _token_attention_backward(tokens, qkv, weights, d_flat, attn: AttentionWeights):
    """Backward of _token_attention_forward; returns (d_tokens, dWq, dWk, dWv)."""
    b, t, d = tokens.shape
    q, k, v = qkv
    d_att = d_flat.reshape(b, t, d)
    dq, dk, dv = backend.attention_backward(q, k, v, weights, d_att, ATTN_SCALE)
    flat_tokens = tokens.reshape(b * t, d)
    d_wq = backend.matmul_at_b(flat_tokens, dq.reshape(b * t, d))
    d_wk = backend.matmul_at_b(flat_tokens, dk.reshape(b * t, d))
    d_wv = backend.matmul_at_b(flat_tokens, dv.reshape(b * t, d))
    d_tokens = (backend.matmul_a_bt(dq.reshape(b * t, d), attn.w_q)
                + backend.matmul_a_bt(dk.reshape(b * t, d), attn.w_k)
                + backend.matmul_a_bt(dv.reshape(b * t, d), attn.w_v)).reshape(b, t, d)
    return d_tokens, d_wq, d_wk, d_wv


def _cross_forward(t_rows: np.ndarray, v_rows: np.ndarray,
                   cross_t: AttentionWeights, cross_v: AttentionWeights):
    """Single-token cross attention for a batch: t' attends t-queries over
    v-keys/values and vice versa. Returns (t', v', cache)."""
    qt = backend.matmul(t_rows, cross_t.w_q)[:, np.newaxis, :]
    kt = backend.matmul(t_rows, cross_t.w_k)[:, np.newaxis, :]
    vt = backend.matmul(t_rows, cross_t.w_v)[:, np.newaxis, :]
    qv = backend.matmul(v_rows, cross_v.w_q)[:, np.newaxis, :]
    kv = backend.matmul(v_rows, cross_v.w_k)[:, np.newaxis, :]
    vv = backend.matmul(v_rows, cross_v.w_v)[:, np.newaxis, :]
    wt, t_prime = backend.attention_forward(qt, kv, vv, ATTN_SCALE)
    wv, v_prime = backend.attention_forward(qv, kt, vt, ATTN_SCALE)
    cache = (qt, kt, vt, qv, kv, vv, wt, wv)
    return t_prime[:, 0, :], v_prime[:, 0, :], cache


def _cross_backward(t_rows, v_rows, cache, d_tp, d_vp,
                    cross_t: AttentionWeights, cross_v: AttentionWeights):
    """Backward of _cross_forward. The query/key branches carry exactly zero
    gradient (single-key softmax is constant); they are still propagated
    through the kernel so no block needs special-casing."""
    qt, kt, vt, qv, kv, vv, wt, wv = cache
    d_tp3 = d_tp[:, np.newaxis, :]
    d_vp3 = d_vp[:, np.newaxis, :]
    dqt, dkv, dvv = backend.attention_backward(qt, kv, vv, wt, d_tp3, ATTN_SCALE)
    dqv, dkt, dvt = backend.attention_backward(qv, kt, vt, wv, d_vp3, ATTN_SCALE)
    dqt, dkv, dvv = dqt[:, 0, :], dkv[:, 0, :], dvv[:, 0, :]
    dqv, dkt, dvt = dqv[:, 0, :], dkt[:, 0, :], dvt[:, 0, :]
    grads = {
        "cross_t_wq": backend.matmul_at_b(t_rows, dqt),
        "cross_t_wk": backend.matmul_at_b(t_rows, dkt),
        "cross_t_wv": backend.matmul_at_b(t_rows, dvt),
        "cross_v_wq": backend.matmul_at_b(v_rows, dqv),
        "cross_v_wk": backend.matmul_at_b(v_rows, dkv),
        "cross_v_wv": backend.matmul_at_b(v_rows, dvv),
    }
    d_t = (backend.matmul_a_bt(dqt, cross_t.w_q)
           + backend.matmul_a_bt(dkt, cross_t.w_k)
           + backend.matmul_a_bt(dvt, cross_t.w_v))
    d_v = (backend.matmul_a_bt(dqv, cross_v.w_q)
           + backend.matmul_a_bt(dkv, cross_v.w_k)
           + backend.matmul_a_bt(dvv, cross_v.w_v))
    return d_t, d_v, grads


def _fuse_forward(model: FusionModel, t_rows: np.ndarray, v_rows: np.ndarray):
    if model.kind == FusionKind.BASIC:
        return np.concatenate([t_rows, v_rows], axis=1), None
    if model.kind == FusionKind.SELF_ATTENTION:
        tokens = np.stack([t_rows, v_rows], axis=1)
        qkv, weights, fused, _ = _token_attention_forward(tokens, model.self_attention())
        return fused, ("self", tokens, qkv, weights)
    # dual attention
    t_prime, v_prime, cross_cache = _cross_forward(
        t_rows, v_rows, model.cross_attention("t"), model.cross_attention("v"))
    tokens = np.stack([t_prime, v_prime], axis=1)
    qkv, weights, fused, _ = _token_attention_forward(tokens, model.self_attention())
    return fused, ("dual", tokens, qkv, weights, cross_cache)


def _fuse_backward(model: FusionModel, t_rows, v_rows, fuse_cache, d_fused):
    grads: Dict[str, np.ndarray] = {}
    if model.kind == FusionKind.BASIC:
        return d_fused[:, :MODEL_DIM], d_fused[:, MODEL_DIM:], grads
    if model.kind == FusionKind.SELF_ATTENTION:
        _, tokens, qkv, weights = fuse_cache
        d_tokens, d_wq, d_wk, d_wv = _token_attention_backward(
            tokens, qkv, weights, d_fused, model.self_attention())
        grads.update({"self_wq": d_wq, "self_wk": d_wk, "self_wv": d_wv})
        return d_tokens[:, 0, :], d_tokens[:, 1, :], grads
    _, tokens, qkv, weights, cross_cache = fuse_cache
    d_tokens, d_wq, d_wk, d_wv = _token_attention_backward(
        tokens, qkv, weights, d_fused, model.self_attention())
    grads.update({"self_wq": d_wq, "self_wk": d_wk, "self_wv": d_wv})
    d_t, d_v, cross_grads = _cross_backward(
        t_rows, v_rows, cross_cache, d_tokens[:, 0, :], d_tokens[:, 1, :],
        model.cross_attention("t"), model.cross_attention("v"))
    grads.update(cross_grads)
    return d_t, d_v, grads


def _dropout_mask(rng, shape, rate, dtype):
    return (rng.random(shape) >= rate).astype(dtype) / np.dtype(dtype).type(1.0 - rate)


def forward_batch(model: FusionModel, xt: np.ndarray, xv: np.ndarray, *,
                  train: bool = False, dropout_rate: float = 0.0,
                  rng: Optional[np.random.Generator] = None):
    """Vectorized pipeline: (B,768), (B,384) -> probabilities (B,3) + cache."""
    p = model.params
    if xt.shape[1] != TEXT_DIM or xv.shape[1] != IMAGE_DIM:
        raise DimensionError(
            f"expected inputs (n,{TEXT_DIM}) and (n,{IMAGE_DIM}), got {xt.shape} and {xv.shape}")
    if not 0.0 <= dropout_rate < 1.0:
        raise DomainError(f"dropout rate must be in [0,1), got {dropout_rate}")
    dtype = p["text_w"].dtype
    t_rows = backend.matmul(xt, p["text_w"]) + p["text_b"]
    v_rows = backend.matmul(xv, p["vis_w"]) + p["vis_b"]
    fused, fuse_cache = _fuse_forward(model, t_rows, v_rows)
    m1 = m2 = None
    if train and dropout_rate > 0.0:
        m1 = _dropout_mask(rng, fused.shape, dropout_rate, dtype)
        c_in = fused * m1
    else:
        c_in = fused
    z1 = backend.matmul(c_in, p["fc1_w"]) + p["fc1_b"]
    h = numerics.relu(z1)
    if train and dropout_rate > 0.0:
        m2 = _dropout_mask(rng, h.shape, dropout_rate, dtype)
        h_in = h * m2
    else:
        h_in = h
    z2 = backend.matmul(h_in, p["fc2_w"]) + p["fc2_b"]
    probs = backend.softmax_rows(z2)
    cache = {"xt": xt, "xv": xv, "t": t_rows, "v": v_rows, "fuse": fuse_cache,
             "c_in": c_in, "z1": z1, "h_in": h_in, "m1": m1, "m2": m2}
    return probs, cache


def backward_batch(model: FusionModel, cache, d_logits: np.ndarray) -> Dict[str, np.ndarray]:
    """Gradients of the scalar loss w.r.t. every parameter block, given
    d(loss)/d(logits). Keys mirror model.params exactly."""
    p = model.params
    d_h_in, d_fc2_w, d_fc2_b = numerics.linear_backward(cache["h_in"], p["fc2_w"], d_logits)
    d_h = d_h_in if cache["m2"] is None else d_h_in * cache["m2"]
    d_z1 = numerics.relu_backward(cache["z1"], d_h)
    d_c_in, d_fc1_w, d_fc1_b = numerics.linear_backward(cache["c_in"], p["fc1_w"], d_z1)
    d_fused = d_c_in if cache["m1"] is None else d_c_in * cache["m1"]
    d_t, d_v, grads = _fuse_backward(model, cache["t"], cache["v"], cache["fuse"], d_fused)
    grads["fc1_w"], grads["fc1_b"] = d_fc1_w, d_fc1_b
    grads["fc2_w"], grads["fc2_b"] = d_fc2_w, d_fc2_b
    grads["text_w"] = backend.matmul_at_b(cache["xt"], d_t)
    grads["text_b"] = d_t.sum(axis=0, keepdims=True)
    grads["vis_w"] = backend.matmul_at_b(cache["xv"], d_v)
    grads["vis_b"] = d_v.sum(axis=0, keepdims=True)
    return {name: grads[name] for name in p}


def predict_batch(model: FusionModel, xt: np.ndarray, xv: np.ndarray) -> np.ndarray:
    """Inference-mode probabilities for a batch."""
    probs, _ = forward_batch(model, xt, xv, train=False)
    return probs


# ---------------------------------------------------------------------------
# Whole-model gradient check
# ---------------------------------------------------------------------------

_KINK_MARGIN = 2e-2  # min |pre-activation| at the probe point; see below


def model_grad_check(kind: str, *, eps: float = 1e-3, seed: int = 0,
                     gamma: float = 2.0, batch: int = 4,
                     samples_per_block: int = 24,
                     grads_fn=None) -> Dict[str, float]:
    """Finite-difference check of the full focal-loss gradient, per block.

    Runs in float64 on random data. For each parameter block a seeded subset
    of coordinates (up to `samples_per_block`) is swept with central
    differences; returns {block name: max relative error}.

    The loss is non-differentiable where a rectifier pre-activation is zero,
    so the probe point is nudged to be generic: any hidden column with a
    pre-activation inside the margin gets its bias shifted (deterministically)
    until the whole column clears it. The margin exceeds the largest shift a
    single +-eps coordinate perturbation can cause upstream.
    """
    from .training import focal_loss_batch  # deferred: training imports fusion

    rng = np.random.default_rng(seed)
    model = init_params(kind, seed).astype(np.float64)
    # break the symmetry of zero biases so their gradients are generic
    for name in model.params:
        if name.endswith("_b"):
            model.params[name] = rng.normal(0.0, 0.05, model.params[name].shape)
    xt = rng.normal(0.0, 1.0, (batch, TEXT_DIM))
    xv = rng.normal(0.0, 1.0, (batch, IMAGE_DIM))
    y = rng.integers(0, N_CLASSES, batch)
    _, probe = forward_batch(model, xt, xv)
    z1 = probe["z1"]
    for j in range(z1.shape[1]):
        column = z1[:, j]
        if np.abs(column).min() >= _KINK_MARGIN:
            continue
        for step in range(1, 64):
            shift = 0.03 * ((step + 1) // 2) * (1 if step % 2 else -1)
            if np.abs(column + shift).min() >= _KINK_MARGIN:
                model.params["fc1_b"][0, j] += shift
                break
        else:
            raise EvaluationError(f"no kink-free bias shift for hidden unit {j}")
    if grads_fn is None:
        grads_fn = backward_batch

    def loss_with(params: Dict[str, np.ndarray]) -> float:
        probs, _ = forward_batch(FusionModel(kind, params), xt, xv)
        loss, _ = focal_loss_batch(probs, y, gamma)
        return loss

    results: Dict[str, float] = {}
    for block_index, (name, shape) in enumerate(param_layout(kind)):
        base = model.params[name]

        def f(theta, _name=name, _shape=shape):
            params = dict(model.params)
            params[_name] = theta.reshape(_shape)
            return loss_with(params)

        def grad(theta, _name=name, _shape=shape):
            params = dict(model.params)
            params[_name] = theta.reshape(_shape)
            m = FusionModel(kind, params)
            probs, cache = forward_batch(m, xt, xv)
            _, d_logits = focal_loss_batch(probs, y, gamma)
            return grads_fn(m, cache, d_logits)[_name].reshape(-1)

        size = base.size
        count = min(samples_per_block, size)
        coord_rng = np.random.default_rng([seed, _KIND_CODES[kind], block_index])
        indices = sorted(coord_rng.choice(size, size=count, replace=False).tolist())
        results[name] = numerics.grad_check(f, grad, base.reshape(-1), eps=eps, indices=indices)
    return results


# ---------------------------------------------------------------------------
# Model file I/O: magic "FMDL", version u32, kind u8, tensor count u32, then
# per tensor: name length u16 + UTF-8 name, rows u32, cols u32, f32 payload.
# ---------------------------------------------------------------------------

MODEL_MAGIC = b"FMDL"
MODEL_VERSION = 1


def save_model(model: FusionModel, path: str) -> None:
    model.validate()
    blob = bytearray()
    blob += MODEL_MAGIC
    blob += struct.pack("<I", MODEL_VERSION)
    blob += struct.pack("<B", _KIND_CODES[model.kind])
    blob += struct.pack("<I", len(model.params))
    for name, tensor in model.params.items():
        encoded = name.encode("utf-8")
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        rows, cols = tensor.shape
        blob += struct.pack("<II", rows, cols)
        blob += tensor.astype("<f4", copy=False).tobytes()
    with open(path, "wb") as fh:
        fh.write(blob)


def load_model(path: str) -> FusionModel:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 13:
        raise FormatError(f"{path}: truncated header")
    if buf[:4] != MODEL_MAGIC:
        raise FormatError(f"{path}: bad magic {buf[:4]!r}, expected {MODEL_MAGIC!r}")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != MODEL_VERSION:
        raise UnsupportedVersionError(
            f"{path}: model format version {version} unsupported (this build reads {MODEL_VERSION})")
    kind_code = buf[8]
    if kind_code not in _CODE_KINDS:
        raise FormatError(f"{path}: unknown fusion kind code {kind_code}")
    kind = _CODE_KINDS[kind_code]
    (n_tensors,) = struct.unpack_from("<I", buf, 9)
    offset = 13
    params: Dict[str, np.ndarray] = {}
    for i in range(n_tensors):
        if offset + 2 > len(buf):
            raise FormatError(f"{path}: truncated at tensor {i}")
        (name_len,) = struct.unpack_from("<H", buf, offset)
        offset += 2
        if offset + name_len + 8 > len(buf):
            raise FormatError(f"{path}: truncated at tensor {i}")
        name = buf[offset:offset + name_len].decode("utf-8")
        offset += name_len
        rows, cols = struct.unpack_from("<II", buf, offset)
        offset += 8
        count = rows * cols
        if offset + 4 * count > len(buf):
            raise FormatError(f"{path}: truncated payload for tensor {name!r}")
        tensor = np.frombuffer(buf, dtype="<f4", count=count, offset=offset).copy()
        offset += 4 * count
        if name in params:
            raise FormatError(f"{path}: duplicate tensor {name!r}")
        params[name] = tensor.reshape(rows, cols)
    if offset != len(buf):
        raise FormatError(f"{path}: {len(buf) - offset} trailing bytes")
    return FusionModel(kind, params).validate()
