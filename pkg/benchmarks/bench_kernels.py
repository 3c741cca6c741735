"""Compare the compiled and pure-Python kernels.

    python benchmarks/bench_kernels.py
    python benchmarks/bench_kernels.py --repeat 20 --donors 36 --periods 21

Each kernel is run on identical inputs with both backends; the script checks
the outputs agree and prints the best-of-``repeat`` wall time for each.
"""

import argparse
import time

import numpy as np

from cfpanel._backend import HAVE_COMPILED, get_kernels


def best_time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def lasso_case(periods, donors, lam, seed):
    r = np.random.default_rng(seed)
    X = r.normal(size=(periods, donors)).cumsum(axis=0)
    X = (X - X.mean(axis=0)) / X.std(axis=0)
    y = X @ r.normal(size=donors) * 0.3 + r.normal(size=periods)
    y -= y.mean()
    xt = np.ascontiguousarray(X.T)

    def run(kern):
        beta = np.zeros(donors)
        kern.lasso_cd(xt, y, beta, lam, 1e-12, 100_000)
        return beta

    return run


def bootstrap_case(length, reps, seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=length)
    b = int(np.ceil(np.sqrt(length)))
    starts = r.integers(0, length, size=(reps, -(-length // b)))

    def run(kern):
        return np.asarray(kern.circular_block_means(x, starts, b))

    return run


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--periods", type=int, default=21, help="pre-treatment periods for the LASSO case")
    ap.add_argument("--donors", type=int, default=36)
    ap.add_argument("--post", type=int, default=12, help="post-treatment periods for the bootstrap case")
    ap.add_argument("--reps", type=int, default=1000, help="bootstrap replications")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if not HAVE_COMPILED:
        print("compiled kernels not built; nothing to compare")
        return 1
    py, cy = get_kernels("python"), get_kernels("compiled")
    cases = [(f"lasso_cd lam={lam}", lasso_case(args.periods, args.donors, lam, args.seed))
             for lam in (0.01, 0.1, 0.5)]
    cases.append((f"circular_block_means B={args.reps}", bootstrap_case(args.post, args.reps, args.seed)))

    print(f"{'kernel':<32}{'python (ms)':>14}{'compiled (ms)':>16}{'speedup':>10}")
    for name, run in cases:
        t_py, out_py = best_time(lambda: run(py), args.repeat)
        t_cy, out_cy = best_time(lambda: run(cy), args.repeat)
        if not np.allclose(out_py, out_cy, rtol=0, atol=1e-10):
            raise SystemExit(f"{name}: backends disagree")
        print(f"{name:<32}{1e3 * t_py:>14.3f}{1e3 * t_cy:>16.3f}{t_py / t_cy:>9.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
