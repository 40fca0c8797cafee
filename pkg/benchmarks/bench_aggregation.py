#!/usr/bin/env python3
"""Timing comparison of the two aggregation backends.

The compiled extension and the numpy fallback implement the same
contract; this script times ``aggregate`` and ``aggregate_backward`` on a
few representative shapes and reports the ratio.  Run from the repo root:

    python3 benchmarks/bench_aggregation.py [--repeats N] [--batch N]
"""

import argparse
import time

import numpy as np

from cadanet import kernels

# (channels, height, width, g, head_channels, stride)
SHAPES = [
    (64, 56, 56, 7, 8, 1),
    (128, 28, 28, 7, 8, 1),
    (256, 14, 14, 7, 16, 1),
    (64, 56, 56, 7, 8, 2),
    (64, 56, 56, 3, 8, 1),
]


def _best_of(repeats, fn):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_shape(batch, c, h, w, g, head_channels, stride, repeats,
                dtype=np.float32):
    rng = np.random.default_rng(0)
    heads = c // head_channels
    h_out = (h + 2 * (g // 2) - g) // stride + 1
    w_out = (w + 2 * (g // 2) - g) // stride + 1
    x = rng.standard_normal((batch, c, h, w)).astype(dtype)
    maps = rng.standard_normal(
        (batch, heads * g * g, h_out, w_out)).astype(dtype)

    rows = {}
    out_ref = None
    for name in ("cython", "numpy"):
        if name == "cython" and kernels.backend() != "cython":
            continue
        out = kernels.aggregate(x, maps, head_channels, stride,
                                backend_name=name)
        if out_ref is None:
            out_ref = out
        else:
            err = np.abs(out - out_ref).max()
            assert err < 1e-4, f"backends disagree by {err}"
        grad = np.ones_like(out)
        fwd = _best_of(repeats, lambda: kernels.aggregate(
            x, maps, head_channels, stride, backend_name=name))
        bwd = _best_of(repeats, lambda: kernels.aggregate_backward(
            grad, x, maps, head_channels, stride, backend_name=name))
        rows[name] = (fwd, bwd)
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--repeats", type=int, default=5,
                        help="best-of-N timing (default 5)")
    parser.add_argument("--batch", type=int, default=2)
    args = parser.parse_args()

    print(f"default backend: {kernels.backend()}")
    if kernels.backend() != "cython":
        print("compiled extension unavailable; timing the numpy path only")
    header = (f"{'shape':<26s} {'direction':<9s} {'cython':>10s} "
              f"{'numpy':>10s} {'ratio':>7s}")
    print(header)
    print("-" * len(header))
    for c, h, w, g, hc, stride in SHAPES:
        label = f"c{c} {h}x{w} g{g} ch{hc} s{stride}"
        rows = bench_shape(args.batch, c, h, w, g, hc, stride, args.repeats)
        for i, direction in enumerate(("forward", "backward")):
            cy = rows.get("cython")
            np_t = rows["numpy"][i]
            if cy is None:
                print(f"{label:<26s} {direction:<9s} {'-':>10s} "
                      f"{np_t * 1e3:>8.2f}ms {'-':>7s}")
            else:
                ratio = np_t / cy[i]
                print(f"{label:<26s} {direction:<9s} {cy[i] * 1e3:>8.2f}ms "
                      f"{np_t * 1e3:>8.2f}ms {ratio:>6.2f}x")


if __name__ == "__main__":
    main()
