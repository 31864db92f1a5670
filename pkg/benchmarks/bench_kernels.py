"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from tacvi import _fallback

try:
    from tacvi import _ckernels
except ImportError:
    _ckernels = None


def cases(rng):
    n, c, d = 2000, 10, 64
    P = rng.random((n, c))
    Y = (rng.random((n, c)) > 0.6).astype(float)
    W = (rng.random((n, c)) > 0.5).astype(float)
    A, B = rng.normal(size=(n, d)), rng.random((n, d)) + 0.1
    w = (rng.random(n) > 0.5).astype(float)
    S = np.round(rng.random((n, c)), 2)
    return {
        "masked_bce": (P, Y, W, 1e-7),
        "compression": (A, B, w),
        "row_sq_error": (A, B, w),
        "ap_rows": (S, Y),
        "rank_loss_rows": (S, Y),
        "auc_cols": (S, Y),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=20)
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled kernels not built; only the fallback is available")
    print(f"{'kernel':<16}{'numpy ms':>10}{'cython ms':>11}{'speedup':>9}")
    for name, argv in cases(np.random.default_rng(0)).items():
        def best(mod):
            f = getattr(mod, name)
            return min(timeit.repeat(lambda: f(*argv), repeat=args.repeat, number=args.number)) / args.number * 1e3
        py = best(_fallback)
        if _ckernels is None:
            print(f"{name:<16}{py:>10.3f}{'-':>11}{'-':>9}")
        else:
            cy = best(_ckernels)
            print(f"{name:<16}{py:>10.3f}{cy:>11.3f}{py / cy:>8.1f}x")


if __name__ == "__main__":
    main()
