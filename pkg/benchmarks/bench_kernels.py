"""Benchmark the jitted kernels against their pure-NumPy fallbacks.

Times both backends of every hot kernel on pipeline-sized inputs and prints
a table with speedups. An unmeasured warm-up call compiles the jitted
versions first. The same comparison can be forced package-wide by setting
SHIFTRISK_NO_NUMBA=1 before importing shiftrisk.

Run:

    python benchmarks/bench_kernels.py [--repeats 5]
"""

import argparse
import statistics
import time

import numpy as np

from shiftrisk._kernels import _numba, _numpy


def make_cases(rng):
    x_big = rng.normal(size=(2000, 8))
    y_big = rng.normal(size=(1000, 8))
    resid = rng.normal(size=200_000)
    coord_c = rng.normal(size=60_000)
    coord_x = rng.normal(size=60_000)
    coord_x[coord_x == 0] = 1.0
    degree = 3
    interior = np.sort(rng.random(5))
    knots = np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])
    points = rng.random(200_000)
    return [
        ("rbf_gram 2000x1000x8", "rbf_gram", (x_big, y_big, 0.7)),
        ("pinball_sum n=200k", "pinball_sum", (resid, 0.25)),
        ("smoothed_pinball n=200k", "smoothed_pinball", (resid, 0.25, 0.05)),
        ("coord_argmin n=60k", "pinball_coord_argmin", (coord_c, coord_x, 0.25, 1e-4)),
        ("bspline_design n=200k", "bspline_design", (points, knots, degree)),
    ]


def time_call(fn, args, repeats):
    durations = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        durations.append(time.perf_counter() - t0)
    return statistics.median(durations)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    cases = make_cases(rng)

    print("[warmup] compiling jitted kernels")
    for _, name, call_args in cases:
        getattr(_numba, name)(*call_args)

    header = f"{'kernel':28s} {'numpy (ms)':>12s} {'numba (ms)':>12s} {'speedup':>9s}"
    print(header)
    print("-" * len(header))
    for label, name, call_args in cases:
        t_np = time_call(getattr(_numpy, name), call_args, args.repeats)
        t_nb = time_call(getattr(_numba, name), call_args, args.repeats)
        print(f"{label:28s} {1e3 * t_np:12.2f} {1e3 * t_nb:12.2f} {t_np / t_nb:8.2f}x")


if __name__ == "__main__":
    main()
