#!/usr/bin/env python3
"""Benchmark the numba and numpy kernel backends against each other.

Times the convolution and pooling kernels on layer shapes the segmentation
network actually runs, prints GFLOP/s per backend, and checks that both
backends agree numerically.

Usage: python benchmarks/bench_kernels.py [--repeats N] [--batch B] [--length L]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from sleepkd import kernels


def time_call(fn, repeats: int) -> float:
    fn()  # warm-up (JIT compile / page-in)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_conv(batch: int, ci: int, co: int, length: int, k: int, repeats: int):
    rng = np.random.default_rng(0)
    xp = rng.standard_normal((batch, ci, length + k - 1))
    w = rng.standard_normal((co, ci, k))
    bias = rng.standard_normal(co)
    dy = rng.standard_normal((batch, co, length))
    macs = batch * ci * co * k * length

    rows = []
    results = {}
    for backend in kernels.available_backends():
        kernels.set_backend(backend)
        t_f = time_call(lambda: kernels.conv1d_valid(xp, w, bias), repeats)
        t_gi = time_call(lambda: kernels.conv1d_grad_input(dy, w, xp.shape[2]), repeats)
        t_gw = time_call(lambda: kernels.conv1d_grad_weights(xp, dy, k), repeats)
        results[backend] = kernels.conv1d_valid(xp, w, bias)
        rows.append((backend, t_f, t_gi, t_gw, 2 * macs))
    if len(results) == 2:
        err = np.max(np.abs(results["numba"] - results["numpy"]))
        agree = f"max |numba-numpy| = {err:.3e}"
    else:
        agree = "single backend only"

    shape = f"conv B={batch} {ci}->{co} L={length} k={k}"
    print(f"\n{shape}   ({agree})")
    print(f"  {'backend':8s} {'fwd ms':>9s} {'GF/s':>7s} {'bwd-x ms':>9s} {'GF/s':>7s} {'bwd-w ms':>9s} {'GF/s':>7s}")
    for backend, t_f, t_gi, t_gw, flops in rows:
        print(
            f"  {backend:8s} {t_f * 1e3:9.2f} {flops / t_f / 1e9:7.1f}"
            f" {t_gi * 1e3:9.2f} {flops / t_gi / 1e9:7.1f}"
            f" {t_gw * 1e3:9.2f} {flops / t_gw / 1e9:7.1f}"
        )


def bench_pool(batch: int, c: int, length: int, repeats: int):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((batch, c, length))
    print(f"\nmaxpool B={batch} C={c} L={length}")
    for backend in kernels.available_backends():
        kernels.set_backend(backend)
        y, arg = kernels.maxpool2_forward(x)
        dy = rng.standard_normal(y.shape)
        t_f = time_call(lambda: kernels.maxpool2_forward(x), repeats)
        t_b = time_call(lambda: kernels.maxpool2_backward(dy, arg), repeats)
        print(f"  {backend:8s} fwd {t_f * 1e3:8.2f} ms   bwd {t_b * 1e3:8.2f} ms")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--batch", type=int, default=8)
    ap.add_argument("--length", type=int, default=54000)
    args = ap.parse_args()

    base = 4
    print(f"backends available: {kernels.available_backends()}")
    # encoder-shaped layers from top (long, narrow) to bottleneck (short, wide)
    configs = [
        (1, base, args.length),
        (base, base, args.length),
        (2 * base, 4 * base, args.length // 4),
        (8 * base, 16 * base, args.length // 16),
        (16 * base, 32 * base, args.length // 32),
        (48 * base, 16 * base, args.length // 16),  # decoder concat block
    ]
    for ci, co, length in configs:
        bench_conv(args.batch, ci, co, length, 5, args.repeats)
    bench_pool(args.batch, base, args.length, args.repeats)


if __name__ == "__main__":
    main()
