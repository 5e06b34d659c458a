"""Time the numba kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat 5] [--n 400]

Both paths are called directly, so a single process covers both; the
first numba call (compilation) is excluded from the timings.
"""
from __future__ import annotations

import argparse
import sys
import timeit

import numpy as np

from rashomon_grs import _kernels as K


def cases(n: int, m: int, reps: int, rng: np.random.Generator):
    y = rng.normal(size=(n, m))
    pred_pairs = rng.normal(size=(n, n, m))
    pred_reps = rng.normal(size=(reps, n, m))
    base = K.row_losses_np(y + 0.1, y, K.MSE)
    x = rng.normal(size=(n, 3))
    cols = np.array([0, 2])
    return {
        "row_losses": (lambda: K.row_losses_np(pred_reps[0], y, K.MSE),
                       lambda: K.row_losses_nb(pred_reps[0], y, K.MSE)),
        "pair_delta": (lambda: K.pair_delta_np(pred_pairs, base, y, K.MSE),
                       lambda: K.pair_delta_nb(pred_pairs, base, y, K.MSE)),
        "repeat_delta": (lambda: K.repeat_delta_np(pred_reps, base, y, K.MAE),
                         lambda: K.repeat_delta_nb(pred_reps, base, y, K.MAE)),
        "switched_inputs": (lambda: K.switched_inputs_np(x, cols),
                            lambda: K.switched_inputs_nb(x, cols)),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=400, help="rows (pair kernels are n x n)")
    ap.add_argument("--m", type=int, default=4, help="output components")
    ap.add_argument("--reps", type=int, default=100, help="shuffles for the repeat kernel")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not K.HAS_NUMBA:
        print("numba unavailable or disabled (RASHOMON_GRS_NUMBA); nothing to compare", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    print(f"n={args.n} m={args.m} reps={args.reps}; best of {args.repeat}")
    print(f"{'kernel':<16}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, (f_np, f_nb) in cases(args.n, args.m, args.reps, rng).items():
        a, b = f_np(), f_nb()  # warm-up and compile
        if not np.allclose(a, b, rtol=1e-12, atol=1e-12):
            print(f"{name}: paths disagree", file=sys.stderr)
            return 2
        t_np = min(timeit.repeat(f_np, number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(f_nb, number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<16}{t_np:>12.3f}{t_nb:>12.3f}{t_np / t_nb:>10.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
