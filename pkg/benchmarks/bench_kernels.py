"""Time the hot kernels under the numba and numpy backends.

Usage: ``python benchmarks/bench_kernels.py [--p 10000] [--repeat 5]``.
"""

import argparse
import time

import numpy as np

from renyidistill import _accel
from renyidistill.distill import distill
from renyidistill.filters import FilterSpec
from renyidistill.harness import Scenario, auto_partitioning, build_design, layered_partitioning
from renyidistill.rng import GaussianField
from renyidistill.rtest import load_table, simulate_null_stats


def best_of(fn, repeat):
    fn()  # compile / warm caches
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(p):
    rng = np.random.default_rng(0)
    orth = Scenario(p=p)
    d = build_design(orth)
    rho = layered_partitioning(d, orth)
    y = rng.standard_normal(d.n)
    pair = Scenario(p=p, overlap=0.5, q1=0.7)
    dp = build_design(pair)
    rho_soft = auto_partitioning(dp, pair)
    yp = rng.standard_normal(dp.n)
    spec = FilterSpec("k4", 20)
    field = GaussianField(1)
    rows = rng.integers(0, d.n, d.nnz)
    cols = rng.integers(0, d.p, d.nnz)
    table = load_table(32, "order_statistics", 1000)
    x = rng.exponential(size=100_000) * 10
    return {
        f"gaussian field ({d.nnz} draws)": lambda: field.values(0, rows, cols),
        f"distill orthogonal p={p}": lambda: distill(d, rho, y, spec, np.random.default_rng(1),
                                                     field, validate=False),
        f"distill soft pairs p={p}": lambda: distill(dp, rho_soft, yp, spec, np.random.default_rng(1),
                                                     field, validate=False),
        "table lookup (1e5 statistics)": lambda: table.neglogp(x),
        "null draws k=32, p=1000 (1e5)": lambda: simulate_null_stats(
            32, 100_000, np.random.default_rng(2), "order_statistics", 1000),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--p", type=int, default=10_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    names = ["numpy"] + (["numba"] if _accel.HAVE_NUMBA else [])
    timings = {}
    for name in names:
        with _accel.using_backend(name):
            for label, fn in cases(args.p).items():
                timings.setdefault(label, {})[name] = best_of(fn, args.repeat)
    width = max(map(len, timings))
    print(f"{'kernel':<{width}}  " + "  ".join(f"{n:>10}" for n in names) + "   speedup")
    for label, t in timings.items():
        cells = "  ".join(f"{t[n] * 1e3:>8.2f}ms" for n in names)
        speed = f"{t['numpy'] / t['numba']:8.1f}x" if "numba" in t else ""
        print(f"{label:<{width}}  {cells}  {speed}")


if __name__ == "__main__":
    main()
