"""Compiled kernels against the numpy fallback.

Run with ``python benchmarks/bench_kernels.py [--repeat R]``. Prints the best
of ``R`` timings per kernel and backend, and the speedup.
"""
import argparse
import timeit

import numpy as np

from pathfair import kernels


def problems(seed=0):
    rng = np.random.default_rng(seed)
    n, p = 2000, 20
    X = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
    z = X @ rng.standard_normal(p) + rng.standard_normal(n)
    w = rng.uniform(0.2, 1.0, n)
    pf = np.r_[0.0, np.ones(p - 1)]
    psi = rng.uniform(0, 1, 100_000)
    d = rng.normal(0, 3, psi.size)
    wt = rng.normal(0, 1, psi.size)
    lams = np.linspace(-2, 2, 201)

    def cd(impl):
        kernels.wls_l1_cd(X, z, w, np.zeros(p), pf, 0.02, tol=1e-10, impl=impl)

    return {
        "wls_l1_cd (2000 x 20)": cd,
        "xent_scan (1e5 rows, 201 lambdas)":
            lambda impl: kernels.xent_scan(psi, d, wt, lams, impl=impl),
        "logodds_scan (1e5 rows, 201 lambdas)":
            lambda impl: kernels.logodds_scan(psi, d, wt, lams, 1e-6, impl=impl),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    impls = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])
    print(f"{'kernel':40s} " + " ".join(f"{i:>10s}" for i in impls) + "   speedup")
    for name, fn in problems().items():
        best = [min(timeit.repeat(lambda: fn(i), number=1, repeat=args.repeat)) for i in impls]
        speed = f"{best[0] / best[1]:8.1f}x" if len(best) == 2 else "      n/a"
        print(f"{name:40s} " + " ".join(f"{t:10.4f}" for t in best) + f" {speed}")


if __name__ == "__main__":
    main()
