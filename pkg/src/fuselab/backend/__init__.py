"""Kernel backend selection.

Two interchangeable implementations of the dense kernel set exist: a compiled
Cython extension (``fuselab.backend._kernels``) and a numpy fallback
(``fuselab.backend.numpy_backend``). The benchmark
(``benchmarks/bench_backends.py``) shows each wins on different kernels:
numpy's BLAS dominates the large projection matmuls, while the compiled
attention kernels win on the tiny two-token maps where per-call overhead
dominates. Selection happens once, at import:

* ``FUSELAB_BACKEND=auto`` (default) - matmul family from numpy, softmax and
  attention from the compiled extension when built (pure numpy otherwise)
* ``FUSELAB_BACKEND=compiled``       - compiled only; ImportError if unbuilt
* ``FUSELAB_BACKEND=numpy``          - numpy only, always available

``FUSELAB_THREADS``, when set before numpy first loads, caps the thread pools
of numpy's BLAS (exported as the usual *_NUM_THREADS variables).

The module-level functions below are the only kernel surface the rest of the
package uses. They coerce inputs to C-contiguous layout (dtype untouched) so
every implementation sees identical operands.
"""

import os

_threads = os.environ.get("FUSELAB_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import numpy as np

from . import numpy_backend

_MATMUL_NAMES = ("matmul", "matmul_at_b", "matmul_a_bt")
_POINTWISE_NAMES = ("softmax_rows", "softmax_rows_backward",
                    "attention_forward", "attention_backward")


def available_backends():
    """Importable kernel modules, keyed by name. Used by tests and the benchmark."""
    found = {numpy_backend.NAME: numpy_backend}
    try:
        from . import _kernels
        found[_kernels.NAME] = _kernels
    except ImportError:
        pass
    return found


def _select():
    choice = os.environ.get("FUSELAB_BACKEND", "auto").lower()
    if choice not in ("auto", "compiled", "numpy"):
        raise ImportError(f"FUSELAB_BACKEND must be auto|compiled|numpy, got {choice!r}")
    if choice == "numpy":
        return "numpy", {name: numpy_backend for name in _MATMUL_NAMES + _POINTWISE_NAMES}
    try:
        from . import _kernels
    except ImportError:
        if choice == "compiled":
            raise ImportError(
                "FUSELAB_BACKEND=compiled but the extension is not built; "
                "run `pip install -e . --no-build-isolation` or "
                "`python setup.py build_ext --inplace`")
        return "numpy", {name: numpy_backend for name in _MATMUL_NAMES + _POINTWISE_NAMES}
    if choice == "compiled":
        return "compiled", {name: _kernels for name in _MATMUL_NAMES + _POINTWISE_NAMES}
    routing = {name: numpy_backend for name in _MATMUL_NAMES}
    routing.update({name: _kernels for name in _POINTWISE_NAMES})
    return "hybrid", routing


NAME, _routing = _select()


def _c(a):
    return np.ascontiguousarray(a)


def matmul(a, b):
    return _routing["matmul"].matmul(_c(a), _c(b))


def matmul_at_b(a, b):
    return _routing["matmul_at_b"].matmul_at_b(_c(a), _c(b))


def matmul_a_bt(a, b):
    return _routing["matmul_a_bt"].matmul_a_bt(_c(a), _c(b))


def softmax_rows(x):
    return _routing["softmax_rows"].softmax_rows(_c(x))


def softmax_rows_backward(y, dy):
    return _routing["softmax_rows_backward"].softmax_rows_backward(_c(y), _c(dy))


def attention_forward(q, k, v, scale):
    return _routing["attention_forward"].attention_forward(_c(q), _c(k), _c(v), float(scale))


def attention_backward(q, k, v, weights, d_out, scale):
    return _routing["attention_backward"].attention_backward(
        _c(q), _c(k), _c(v), _c(weights), _c(d_out), float(scale))
