"""Throughput comparison of the compiled SGD kernels vs. the pure-Python fallback.

Usage:  python benchmarks/bench_kernels.py [--steps N] [--k K] [--items M]

Both backends run the same step sequences; the benchmark reports steps/second
and the speedup, and verifies the outputs are bit-identical while it is at it.
"""

import argparse
import time

import numpy as np

from fedrec._kernels import available_backends


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=200_000)
    parser.add_argument("--k", type=int, default=16)
    parser.add_argument("--items", type=int, default=500)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    backends = available_backends()
    if len(backends) < 2:
        print(f"only {list(backends)} available; build the extension to compare")

    rng = np.random.default_rng(0)
    Q0 = rng.uniform(-0.05, 0.05, (args.items, args.k))
    p0 = rng.uniform(-0.05, 0.05, args.k)
    rows = rng.integers(0, args.items, args.steps).astype(np.int64)
    targets = rng.uniform(1, 5, args.steps)
    pos = rng.integers(0, args.items, args.steps).astype(np.int64)
    neg = ((pos + 1 + rng.integers(0, args.items - 1, args.steps)) % args.items).astype(np.int64)

    calls = {
        "svd_steps": lambda mod, Q, p: mod.svd_steps(Q, p, rows, targets, 0.05, 0.01, np.empty(args.k)),
        "bpr_steps": lambda mod, Q, p: mod.bpr_steps(Q, p, pos, neg, 0.05, 0.01, np.empty(args.k)),
    }

    print(f"workload: {args.steps} steps, k={args.k}, {args.items} items\n")
    print(f"{'kernel':<12} {'backend':<8} {'time':>9} {'steps/s':>12}")
    for kernel, call in calls.items():
        times = {}
        outputs = {}
        for name, mod in backends.items():
            best = float("inf")
            for _ in range(args.repeats):
                Q, p = Q0.copy(), p0.copy()
                start = time.perf_counter()
                call(mod, Q, p)
                best = min(best, time.perf_counter() - start)
            times[name] = best
            outputs[name] = (Q, p)
            print(f"{kernel:<12} {name:<8} {best:9.3f}s {args.steps / best:12.0f}")
        if len(outputs) == 2:
            same = np.array_equal(outputs["python"][0], outputs["cython"][0]) and np.array_equal(
                outputs["python"][1], outputs["cython"][1]
            )
            print(f"{kernel:<12} bit-identical: {same}, speedup: {times['python'] / times['cython']:.1f}x\n")


if __name__ == "__main__":
    main()
