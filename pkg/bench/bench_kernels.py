#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-numpy fallback.

Usage:
    python bench/bench_kernels.py [--repeats 5]
"""
import argparse
import time

import numpy as np

from foundreg.backend import pure

try:
    from foundreg.backend import _fast
except ImportError:
    _fast = None


def timeit(fn, repeats):
    fn()  # warmup
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(repeats):
    rng = np.random.default_rng(0)
    cases = []

    for shape in [(64, 64, 16), (128, 128, 16), (192, 160, 64)]:
        vol = np.ascontiguousarray(rng.random(shape, dtype=np.float32))
        n = int(np.prod(shape))
        coords = np.ascontiguousarray(rng.uniform(-1, max(shape), size=(3, n)))
        cases.append((f"trilinear_sample {shape}", "trilinear_sample", (vol, coords)))
        disp = np.ascontiguousarray(rng.standard_normal((3, *shape)).astype(np.float32))
        cases.append((f"jacobian_det {shape}", "jacobian_det", (disp,)))

    for n_pts in [2000, 8000]:
        a = np.ascontiguousarray(rng.random((n_pts, 3)) * 100)
        b = np.ascontiguousarray(rng.random((n_pts, 3)) * 100)
        cases.append((f"directed_min_dists {n_pts}x{n_pts}", "directed_min_dists", (a, b)))

    print(f"{'kernel':<38} {'pure (ms)':>10} {'fast (ms)':>10} {'speedup':>8}")
    for label, name, args in cases:
        t_pure = timeit(lambda: getattr(pure, name)(*args), repeats) * 1000
        if _fast is None:
            print(f"{label:<38} {t_pure:>10.1f} {'n/a':>10} {'n/a':>8}")
            continue
        t_fast = timeit(lambda: getattr(_fast, name)(*args), repeats) * 1000
        out_p = getattr(pure, name)(*args)
        out_f = getattr(_fast, name)(*args)
        assert np.array_equal(out_p, out_f), f"{name}: backend results differ"
        print(f"{label:<38} {t_pure:>10.1f} {t_fast:>10.1f} {t_pure / t_fast:>7.1f}x")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    if _fast is None:
        print("note: compiled kernels unavailable; timing the fallback only")
    bench(args.repeats)
