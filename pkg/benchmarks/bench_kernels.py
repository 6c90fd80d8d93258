"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import time

import numpy as np

from groundnet import kernels
from groundnet.rnet import neighbour_pairs


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(rng):
    n, d, a1, a2 = 68_400, 15, 10, 10   # 100 maps of 10x10, every ordered neighbour pair
    theta = rng.normal(size=(n, a1 * d + a2 * a1 + a2))
    x = rng.normal(size=(n, d))
    r, h1, h2 = kernels.relation_forward(theta, x, a1, a2)
    dr = rng.normal(size=n)
    _, _, _, index = neighbour_pairs(10, 10)
    scores = rng.normal(size=(512, 684))
    reward = np.where(rng.random((32, 32)) < 0.25, -1.0, 0.0)
    return {
        "relation_forward (68400 pairs)": lambda impl: kernels.relation_forward(theta, x, a1, a2, impl=impl),
        "relation_backward (68400 pairs)": lambda impl: kernels.relation_backward(theta, x, h1, h2, dr, impl=impl),
        "segment_max (512 maps 10x10)": lambda impl: kernels.segment_max(scores, index, impl=impl),
        "value_iteration (32x32)": lambda impl: kernels.value_iteration(reward, (3, 5), 0.95, 3.0, impl=impl),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    impls = kernels.implementations()
    print(f"active backend: {kernels.BACKEND}; available: {', '.join(impls)}")
    rng = np.random.default_rng(0)
    for name, fn in cases(rng).items():
        row = {k: best_of(lambda: fn(v), args.repeat) for k, v in impls.items()}
        line = "  ".join(f"{k}={t * 1e3:8.2f} ms" for k, t in row.items())
        if "cython" in row:
            line += f"  speedup={row['python'] / row['cython']:.1f}x"
        print(f"{name:34s} {line}")


if __name__ == "__main__":
    main()
