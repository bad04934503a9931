"""The compiled kernels must agree with the numpy reference on every function,
in both precisions. Skipped when the extension is not built."""

import numpy as np
import pytest

from fuselab.backend import available_backends

BACKENDS = available_backends()
needs_compiled = pytest.mark.skipif("compiled" not in BACKENDS,
                                    reason="compiled kernels not built")

TOLS = {np.dtype(np.float32): dict(rtol=3e-5, atol=1e-5),
        np.dtype(np.float64): dict(rtol=1e-12, atol=1e-13)}


def _pair(rng, shape, dtype):
    return rng.normal(size=shape).astype(dtype)


@needs_compiled
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
class TestBackendEquivalence:
    def test_matmul_family(self, rng, dtype):
        ref, fast = BACKENDS["numpy"], BACKENDS["compiled"]
        tol = TOLS[np.dtype(dtype)]
        a = _pair(rng, (9, 17), dtype)
        b = _pair(rng, (17, 5), dtype)
        np.testing.assert_allclose(fast.matmul(a, b), ref.matmul(a, b), **tol)
        c = _pair(rng, (17, 9), dtype)
        np.testing.assert_allclose(fast.matmul_at_b(c, b), ref.matmul_at_b(c, b), **tol)
        d = _pair(rng, (5, 17), dtype)
        np.testing.assert_allclose(fast.matmul_a_bt(a, d), ref.matmul_a_bt(a, d), **tol)

    def test_softmax(self, rng, dtype):
        ref, fast = BACKENDS["numpy"], BACKENDS["compiled"]
        tol = TOLS[np.dtype(dtype)]
        x = _pair(rng, (6, 11), dtype) * 3
        y_ref = ref.softmax_rows(x)
        y_fast = fast.softmax_rows(x)
        np.testing.assert_allclose(y_fast, y_ref, **tol)
        dy = _pair(rng, (6, 11), dtype)
        np.testing.assert_allclose(fast.softmax_rows_backward(y_fast, dy),
                                   ref.softmax_rows_backward(y_ref, dy), **tol)

    def test_attention_roundtrip(self, rng, dtype):
        ref, fast = BACKENDS["numpy"], BACKENDS["compiled"]
        tol = TOLS[np.dtype(dtype)]
        q = _pair(rng, (4, 2, 16), dtype)
        k = _pair(rng, (4, 3, 16), dtype)
        v = _pair(rng, (4, 3, 8), dtype)
        w_ref, o_ref = ref.attention_forward(q, k, v, 0.25)
        w_fast, o_fast = fast.attention_forward(q, k, v, 0.25)
        np.testing.assert_allclose(w_fast, w_ref, **tol)
        np.testing.assert_allclose(o_fast, o_ref, **tol)
        d_out = _pair(rng, (4, 2, 8), dtype)
        for g_fast, g_ref in zip(fast.attention_backward(q, k, v, w_fast, d_out, 0.25),
                                 ref.attention_backward(q, k, v, w_ref, d_out, 0.25)):
            np.testing.assert_allclose(g_fast, g_ref, **tol)

    def test_dtype_preserved(self, rng, dtype):
        for impl in BACKENDS.values():
            out = impl.matmul(_pair(rng, (2, 3), dtype), _pair(rng, (3, 2), dtype))
            assert out.dtype == np.dtype(dtype)
