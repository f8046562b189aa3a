#!/usr/bin/env python3
"""Benchmark the compiled kernel core against the numpy fallback.

Shapes mirror the default training configuration (batch 16, 29 frames,
16x16 crops). Run:

    python benchmarks/bench_kernels.py [--batch 16] [--reps 15]
"""

import argparse
import time

import numpy as np

from lipgcn import kernels
from lipgcn.runtime import tune_threads


def best_of(fn, reps):
    fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times) * 1000.0


def build_cases(batch):
    rng = np.random.default_rng(0)
    T, S = 29, 16
    frames_bt = batch * T
    cases = {}

    x = rng.standard_normal((frames_bt, 8, S, S))
    k = rng.standard_normal((8, 8, 3, 3))
    g = kernels.conv2d_forward(x, k, 2)
    g = rng.standard_normal(g.shape)
    cases["conv2d fwd"] = lambda: kernels.conv2d_forward(x, k, 2)
    cases["conv2d bwd"] = lambda: kernels.conv2d_backward(g, x, k, 2)

    x3 = rng.standard_normal((batch, 1, T, S, S))
    k3 = rng.standard_normal((8, 1, 3, 5, 5))
    g3 = rng.standard_normal((batch, 8, T, S, S))
    cases["conv3d fwd"] = lambda: kernels.conv3d_forward(x3, k3)
    cases["conv3d bwd"] = lambda: kernels.conv3d_backward(g3, x3, k3)

    x1 = rng.standard_normal((batch, 64, T))
    k1 = rng.standard_normal((64, 64, 3))
    g1 = rng.standard_normal((batch, 64, T))
    cases["conv1d fwd"] = lambda: kernels.conv1d_forward(x1, k1, 2)
    cases["conv1d bwd"] = lambda: kernels.conv1d_backward(g1, x1, k1, 2)

    xg = rng.standard_normal((batch, T, 8))
    wx = rng.standard_normal((8, 96)) * 0.3
    wh = rng.standard_normal((32, 96)) * 0.3
    bx = rng.standard_normal(96) * 0.1
    bh = rng.standard_normal(96) * 0.1
    _, cache = kernels.gru_forward(xg, wx, wh, bx, bh)
    gg = rng.standard_normal((batch, T, 32))
    cases["gru fwd"] = lambda: kernels.gru_forward(xg, wx, wh, bx, bh)
    cases["gru bwd"] = lambda: kernels.gru_backward(gg, xg, wx, wh, cache)
    return cases


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--batch", type=int, default=16)
    parser.add_argument("--reps", type=int, default=15)
    args = parser.parse_args()

    tune_threads()
    backends = kernels.available_backends()
    print(f"backends: {backends} (active default: {kernels.backend_name()})")
    results = {}
    for backend in backends:
        kernels.use_backend(backend)
        cases = build_cases(args.batch)
        results[backend] = {name: best_of(fn, args.reps) for name, fn in cases.items()}

    names = list(next(iter(results.values())))
    header = f"{'kernel':<12s}" + "".join(f"{b:>12s}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10s}"
    print(header)
    print("-" * len(header))
    for name in names:
        row = f"{name:<12s}"
        for b in backends:
            row += f"{results[b][name]:>10.2f}ms"
        if len(backends) == 2:
            a, b = backends
            row += f"{results[b][name] / results[a][name]:>9.2f}x"
        print(row)


if __name__ == "__main__":
    main()
