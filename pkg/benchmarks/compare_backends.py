#!/usr/bin/env python3
"""Benchmark the compiled kernel extension against the pure-Python fallback.

Both backends are bit-identical in output; this script shows what the
compiled core buys. Kernel shapes mirror the hot paths of a training step
(batch 128, 33 features, the 16x8 attention geometry). The end-to-end probe
re-runs a short training loop in a subprocess per backend via the
TSLTNET_BACKEND environment variable.

Usage: python benchmarks/compare_backends.py [--skip-end-to-end]
"""

import argparse
import os
import random
import subprocess
import sys
import time
from array import array

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from tsltnet import _pykernels as pk

try:
    from tsltnet import _ckernels as ck
except ImportError:
    ck = None


def zeros(n):
    return array("d", bytes(8 * n))


def rand(n, lo=-1.0, hi=1.0):
    return array("d", (random.uniform(lo, hi) for _ in range(n)))


def make_cases():
    random.seed(0)
    cases = []

    x = rand(128 * 33)
    w = rand(128 * 33)
    out = zeros(128 * 128)
    cases.append(("dense fwd matmul 128x33 @ 33x128",
                  lambda K: K.bmm(x, w, out, 1, 128, 33, 128, False, True)))

    dz = rand(128 * 128)
    dw = zeros(128 * 33)
    cases.append(("dense bwd matmul (transposed)",
                  lambda K: K.bmm(dz, x, dw, 1, 128, 128, 33, True, False)))

    q = rand(256 * 16 * 4)
    k_ = rand(256 * 16 * 4)
    scores = zeros(256 * 16 * 16)
    cases.append(("attention scores bmm, 256 blocks",
                  lambda K: K.bmm(q, k_, scores, 256, 16, 4, 16, False, True)))

    attn = rand(256 * 16 * 16, 0.0, 1.0)
    ctx = zeros(256 * 16 * 4)
    cases.append(("attention context bmm, 256 blocks",
                  lambda K: K.bmm(attn, q, ctx, 256, 16, 16, 4, False, False)))

    sm_in = rand(4096 * 16, -30.0, 30.0)
    sm_out = zeros(4096 * 16)
    cases.append(("rowwise softmax 4096x16",
                  lambda K: K.rowwise_softmax(sm_in, sm_out, 4096, 16)))

    ln_x = rand(2048 * 8)
    gamma = rand(8, 0.5, 1.5)
    beta = rand(8)
    ln_out, xhat, istd = zeros(2048 * 8), zeros(2048 * 8), zeros(2048)
    cases.append(("layernorm fwd 2048x8",
                  lambda K: K.layernorm_fwd(ln_x, gamma, beta, 1e-3, ln_out,
                                            xhat, istd, 2048, 8)))

    p = rand(9722)
    g = rand(9722)
    m = zeros(9722)
    v = zeros(9722)
    cases.append(("adam step, 9722 params",
                  lambda K: K.adam_step(p, g, m, v, 9722, 1e-3, 0.9, 0.999,
                                        1e-7, 0.1, 0.001)))

    dx = rand(128 * 64)
    dout, mask = zeros(128 * 64), zeros(128 * 64)
    cases.append(("dropout fwd 128x64",
                  lambda K: K.dropout_fwd(dx, dout, mask, 128 * 64, 0.3, 7)))

    nbuf = zeros(8192)
    cases.append(("box-muller normal fill, 8192",
                  lambda K: K.fill_normal(nbuf, 8192, 1, 0.0, 1.0)))
    return cases


def time_call(fn, budget=0.25):
    fn()  # warm up
    reps = 1
    while True:
        t0 = time.perf_counter()
        for _ in range(reps):
            fn()
        dt = time.perf_counter() - t0
        if dt >= budget or reps >= 1 << 16:
            return dt / reps
        reps *= 2 if dt < budget / 4 else 2


def kernel_table():
    print(f"{'kernel':<36}{'pure-python':>14}{'compiled':>12}{'speedup':>10}")
    print("-" * 72)
    for name, call in make_cases():
        t_py = time_call(lambda: call(pk))
        if ck is None:
            print(f"{name:<36}{t_py * 1e3:>11.3f} ms{'n/a':>12}{'':>10}")
            continue
        t_c = time_call(lambda: call(ck))
        print(f"{name:<36}{t_py * 1e3:>11.3f} ms{t_c * 1e6:>9.1f} us"
              f"{t_py / t_c:>9.1f}x")


TRAIN_PROBE = r"""
import time
from tsltnet.backend import BACKEND_NAME
from tsltnet.trainer import TrainConfig, train
from tsltnet.numcore import Matrix, RandSource
from tsltnet.pipeline import FeatureMatrix

rng = RandSource(5)
n, d, k = 256, 8, 4
x = Matrix.zeros(n, d)
y = []
for i in range(n):
    c = i % k
    for j in range(d):
        x.data[i * d + j] = (4.0 if j == c else 0.0) + rng.normal()
    y.append(c)
fm = FeatureMatrix(x, y, [f"c{i}" for i in range(k)])
t0 = time.perf_counter()
train("tslt", fm, TrainConfig(batch_size=32, max_epochs=2, seed=1))
print(f"{BACKEND_NAME} {time.perf_counter() - t0:.3f}")
"""


def end_to_end():
    print("\nend-to-end: 2 training epochs, 256 samples, batch 32")
    results = {}
    for backend in ("py", "c"):
        if backend == "c" and ck is None:
            print("  compiled backend not built; skipping")
            return
        env = dict(os.environ, TSLTNET_BACKEND=backend,
                   PYTHONPATH=os.path.join(os.path.dirname(__file__), "..", "src"))
        out = subprocess.run([sys.executable, "-c", TRAIN_PROBE], env=env,
                             capture_output=True, text=True, check=True)
        name, seconds = out.stdout.split()
        results[backend] = float(seconds)
        print(f"  {name:<12} {float(seconds):8.3f} s")
    if len(results) == 2:
        print(f"  speedup      {results['py'] / results['c']:8.1f}x")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--skip-end-to-end", action="store_true")
    args = parser.parse_args()
    if ck is None:
        print("note: compiled extension unavailable; timing pure-python only\n")
    kernel_table()
    if not args.skip_end_to_end:
        end_to_end()
