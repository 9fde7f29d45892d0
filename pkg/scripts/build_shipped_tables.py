"""Regenerate the null tables shipped in ``renyidistill/data/null_tables``."""

import argparse
import time
from pathlib import Path

from renyidistill.rtest import build_null_table, table_filename

KS = (1, 2, 4, 8, 16, 32, 64, 128)
ORDER_STAT_P = (1000,)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--samples", type=int, default=1_000_000)
    ap.add_argument("--seed", type=int, default=20240601)
    ap.add_argument("--out", type=Path,
                    default=Path(__file__).resolve().parents[1] / "src/renyidistill/data/null_tables")
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    jobs = [(k, "partial_sums", None) for k in KS]
    jobs += [(k, "order_statistics", p) for p in ORDER_STAT_P for k in KS]
    for i, (k, method, p) in enumerate(jobs):
        t0 = time.perf_counter()
        table = build_null_table(k, args.samples, args.seed + i, method, p)
        path = args.out / table_filename(k, method, p)
        table.save(path)
        print(f"{path.name}: {time.perf_counter() - t0:.1f}s", flush=True)


if __name__ == "__main__":
    main()
