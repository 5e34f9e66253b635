"""Time the compiled kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--sizes 100 1000 10000]

Prints one row per kernel and size with the best-of-``repeat`` time per call
and the speed-up. The two outputs are also compared, so a broken build shows
up as a mismatch instead of a fast wrong answer.
"""
from __future__ import annotations

import argparse
import sys
import timeit

import numpy as np

from tfm import kernels

IDM_PARAMS = (1.5, 2.0, 2.0, 1.5, 4.0)


def pair_case(n: int, hidden: int, dtype, rng):
    return (rng.normal(size=(n, hidden)).astype(dtype), rng.normal(size=hidden).astype(dtype),
            rng.normal(size=hidden).astype(dtype), 0.1)


def idm_case(n: int, rng):
    return (rng.uniform(0, 15, n), rng.uniform(8, 14, n), rng.uniform(0, 80, n),
            rng.normal(0, 3, n), rng.integers(0, 2, n).astype(np.uint8)) + IDM_PARAMS


def best_time(fn, args, repeat: int) -> float:
    number = max(1, int(0.05 / max(timeit.timeit(lambda: fn(*args), number=1), 1e-7)))
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--sizes", type=int, nargs="+", default=[100, 1000, 10000])
    ap.add_argument("--hidden", type=int, default=32)
    args = ap.parse_args(argv)
    if kernels.BACKEND != "compiled":
        print("compiled extension not available (not built, or TFM_PURE_PYTHON=1); nothing to compare")
        return 1
    rng = np.random.default_rng(0)
    cases = []
    for n in args.sizes:
        for dtype in (np.float64, np.float32):
            cases.append((f"pair_scores {np.dtype(dtype).name}", n, kernels.compiled_pair_scores,
                          kernels.numpy_pair_scores, pair_case(n, args.hidden, dtype, rng),
                          1e-12 if dtype == np.float64 else 1e-4))
        cases.append(("idm_accel float64", n, kernels.compiled_idm_accel, kernels.numpy_idm_accel,
                      idm_case(n, rng), 1e-12))
    print(f"{'kernel':<22}{'n':>8}{'compiled us':>14}{'numpy us':>12}{'speed-up':>10}  match")
    status = 0
    for name, n, fast, slow, case, tol in cases:
        same = np.allclose(fast(*case), slow(*case), rtol=tol, atol=tol)
        status |= not same
        tc, tn = best_time(fast, case, args.repeat), best_time(slow, case, args.repeat)
        print(f"{name:<22}{n:>8}{tc * 1e6:>14.1f}{tn * 1e6:>12.1f}{tn / tc:>9.1f}x  {'yes' if same else 'NO'}")
    return status


if __name__ == "__main__":
    sys.exit(main())
