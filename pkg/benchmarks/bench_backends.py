"""Benchmark: compiled kernels vs the numpy fallback.

Times the kernel set on training-representative shapes, then a full training
epoch per backend (subprocess, since the backend is fixed at import time).

    python3 benchmarks/bench_backends.py [--repeats 200]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from fuselab.backend import available_backends

BATCH = 32
SHAPES = {
    "text projection  (32x768 @ 768x256)": ((BATCH, 768), (768, 256)),
    "visual projection (32x384 @ 384x256)": ((BATCH, 384), (384, 256)),
    "head layer        (32x512 @ 512x256)": ((BATCH, 512), (512, 256)),
}


def _time(fn, repeats):
    fn()  # warm up
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats * 1e6  # microseconds


def bench_kernels(repeats):
    backends = available_backends()
    rng = np.random.default_rng(0)
    rows = []
    for label, (sa, sb) in SHAPES.items():
        a = rng.normal(size=sa).astype(np.float32)
        b = rng.normal(size=sb).astype(np.float32)
        rows.append((f"matmul {label}",
                     {name: _time(lambda m=m: m.matmul(a, b), repeats)
                      for name, m in backends.items()}))
    x = rng.normal(size=(BATCH, 256)).astype(np.float32)
    rows.append(("softmax_rows (32x256)",
                 {name: _time(lambda m=m: m.softmax_rows(x), repeats)
                  for name, m in backends.items()}))
    q = rng.normal(size=(BATCH, 2, 256)).astype(np.float32)
    k = rng.normal(size=(BATCH, 2, 256)).astype(np.float32)
    v = rng.normal(size=(BATCH, 2, 256)).astype(np.float32)
    rows.append(("attention fwd (32 pairs, d=256)",
                 {name: _time(lambda m=m: m.attention_forward(q, k, v, 0.0625), repeats)
                  for name, m in backends.items()}))
    caches = {name: m.attention_forward(q, k, v, 0.0625) for name, m in backends.items()}
    d_out = rng.normal(size=(BATCH, 2, 256)).astype(np.float32)
    rows.append(("attention bwd (32 pairs, d=256)",
                 {name: _time(lambda m=m, w=caches[name][0]:
                              m.attention_backward(q, k, v, w, d_out, 0.0625), repeats)
                  for name, m in backends.items()}))
    return rows


_EPOCH_SNIPPET = """
import sys, time
sys.path.insert(0, {test_dir!r})
from conftest import make_separable
from fuselab import backend, fusion, training
train_set = make_separable(sizes=(64, 64, 64), seed=1)
val_set = make_separable(sizes=(8, 8, 8), seed=2, prefix="v")
config = training.TrainConfig(max_epochs=5, patience=100, seed=0, dropout_rate=0.2)
model = fusion.init_params("dual-attn", 0)
start = time.perf_counter()
training.train(model, train_set, val_set, config)
print((time.perf_counter() - start) / 5.0)
"""


def bench_epoch():
    test_dir = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "tests")
    results = {}
    modes = list(available_backends())
    if len(modes) == 2:
        modes.append("auto")  # hybrid routing: BLAS matmuls + compiled attention
    for name in modes:
        env = dict(os.environ, FUSELAB_BACKEND=name)
        out = subprocess.run([sys.executable, "-c", _EPOCH_SNIPPET.format(test_dir=test_dir)],
                             capture_output=True, text=True, env=env, check=True)
        results[name] = float(out.stdout.strip()) * 1e3  # ms per epoch
    return results


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    parser.add_argument("--skip-epoch", action="store_true",
                        help="kernel microbenchmarks only")
    args = parser.parse_args()

    backends = sorted(available_backends())
    if len(backends) < 2:
        print(f"only {backends} available; build the extension to compare", file=sys.stderr)

    header = f"{'kernel':42s}" + "".join(f"{name:>12s}" for name in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10s}"
    print(header)
    print("-" * len(header))
    for label, times in bench_kernels(args.repeats):
        line = f"{label:42s}" + "".join(f"{times[name]:10.1f}us" for name in backends)
        if len(backends) == 2:
            line += f"{times['numpy'] / times['compiled']:9.2f}x"
        print(line)

    if not args.skip_epoch:
        print()
        epoch = bench_epoch()
        for name, ms in sorted(epoch.items()):
            print(f"dual-attn training epoch, backend={name:8s} {ms:10.1f}ms")


if __name__ == "__main__":
    main()
