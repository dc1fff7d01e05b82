"""Time the numba and numpy kernels on the same inputs.

    python3 benchmarks/bench_kernels.py [--n 2000] [--d 20] [--alpha 0.3] [--reps 20]

Prints per-call wall time for each kernel and backend plus the speedup, and
checks that both backends return identical results.
"""
import argparse
import time

import numpy as np

from rewrap import _kernels
from rewrap.core import PriorSpec
from rewrap.corruption import AttackSpec, GenConfig, apply_attack, generate_clean
from rewrap.estimators import TripOperator
from rewrap.framework import corals_fit


def timeit(fn, reps):
    fn()  # warm-up, includes jit compilation
    t0 = time.perf_counter()
    for _ in range(reps):
        out = fn()
    return (time.perf_counter() - t0) / reps, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--d", type=int, default=20)
    ap.add_argument("--alpha", type=float, default=0.3)
    ap.add_argument("--reps", type=int, default=20)
    a = ap.parse_args()

    data = apply_attack(generate_clean(GenConfig(a.n, a.d, 1.0, 1)), AttackSpec("oaa", a.alpha, 2))
    k = data.meta.corruption_support.size
    tau = 0.049 * a.n
    op = TripOperator(data, tau * np.eye(a.d))
    c = op.offset(np.zeros(a.d))
    v = np.random.default_rng(0).standard_normal(a.n)

    cases = {
        "top_k_mask": lambda: _kernels.top_k_mask(v, k),
        "bottom_k_mask": lambda: _kernels.bottom_k_mask(v, a.n - k),
        "trip_loop": lambda: _kernels.trip_loop(c, op.H, data.X, data.y, k, 1e-4, 400)[0],
        "corals_fit": lambda: corals_fit(data, tau, k).w_hat,
    }
    backends = ["numpy"] + (["numba"] if _kernels.HAVE_NUMBA else [])
    print(f"n={a.n} d={a.d} k={k} reps={a.reps}")
    print(f"{'kernel':<14}" + "".join(f"{b + ' ms':>12}" for b in backends) + f"{'speedup':>10}  match")
    for name, fn in cases.items():
        times, outs = {}, {}
        for b in backends:
            _kernels.set_backend(b)
            times[b], outs[b] = timeit(fn, a.reps)
        match = all(np.array_equal(outs["numpy"], outs[b]) for b in backends)
        speed = times["numpy"] / times["numba"] if "numba" in times else float("nan")
        print(f"{name:<14}" + "".join(f"{1e3 * times[b]:12.3f}" for b in backends) + f"{speed:10.2f}  {match}")


if __name__ == "__main__":
    main()
