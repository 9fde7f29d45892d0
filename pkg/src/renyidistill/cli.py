"""Command-line entry point: ``renyidistill <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .design import load_design, load_partitioning, save_partitioning, variance_fractions
from .distill import distill
from .filters import FilterSpec
from .harness import emit_results, load_config, run_power
from .partition import PartitionConfig, greedy_partition
from .power import omnibus_lower_bound, power_bound_from_lambda, power_lower_bound
from .residualize import CovariateBasis, prepare_response
from .rtest import NullTable, build_null_table, load_table, renyi_test


def _write_json(obj, out=None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out is None:
        print(text)
    else:
        Path(out).write_text(text + "\n")


def cmd_partition(args):
    d = load_design(args.design)
    cfg = PartitionConfig(q0=args.q0, q1=args.q1, k_ref=args.k_ref)
    priority = np.loadtxt(args.priority, dtype=np.int64, ndmin=1) - 1 if args.priority else None
    rho = greedy_partition(d, cfg, priority=priority)
    save_partitioning(rho, args.out)
    diag = args.diagnostics or str(Path(args.out).with_suffix(".diagnostics.csv"))
    with open(diag, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["layer", "size", "min_nu_prime", "min_nu_tilde"])
        for idx, layer in enumerate(rho, 1):
            nu_p, nu_t = variance_fractions(d, layer)
            w.writerow([idx, layer.size, repr(float(nu_p.min())), repr(float(nu_t.min()))])
    print(f"{len(rho)} layer(s) written to {args.out}; diagnostics in {diag}")


def cmd_build_null_table(args):
    table = build_null_table(args.k, args.samples, args.seed, args.method, args.p)
    table.save(args.out)
    print(f"table for k={args.k} ({args.method}) written to {args.out}")


def cmd_renyi_test(args):
    u = np.loadtxt(args.pvalues, ndmin=1)
    if args.table:
        table = NullTable.load(args.table)
    elif args.method:
        table = load_table(args.k, args.method, args.p or u.size)
    else:
        table = None
    stat, pval = renyi_test(u, args.k, table)
    _write_json({"k": args.k, "p": int(u.size), "statistic": float(stat), "pvalue": float(pval)})


def cmd_power_bound(args):
    if args.beta:
        beta = np.loadtxt(args.beta, ndmin=1)
        p = args.p or beta.size
        single = power_lower_bound(beta, args.k, p, args.alpha)
        omni = omnibus_lower_bound(beta, args.k, p, args.alpha)
        record = {"single_k": asdict(single), "schedule": asdict(omni)}
    else:
        if args.lam is None or args.p is None:
            raise SystemExit("power-bound needs --beta, or --lambda with --p")
        record = {"single_k": asdict(power_bound_from_lambda(args.lam, args.k, args.p, args.alpha))}
    record.update(k=args.k, alpha=args.alpha)
    _write_json(record)


def cmd_simulate(args):
    s = load_config(args.config, seed=args.seed, workers=args.workers)
    result = run_power(s)
    path = emit_results(result, args.out, timing=args.timing)
    print(f"results written to {path}")


def cmd_distill(args):
    d = load_design(args.design)
    rho = load_partitioning(args.partition, n=d.n)
    y = np.loadtxt(args.response, ndmin=1)
    rng = np.random.default_rng(args.seed)
    basis = None
    if args.covariates:
        basis = CovariateBasis.from_covariates(np.loadtxt(args.covariates, ndmin=2),
                                               intercept=args.intercept)
    elif args.intercept:
        basis = CovariateBasis.intercept(d.n)
    y = prepare_response(y, basis, args.rank_normalize, rng)
    filt = FilterSpec.parse(args.filter)
    res = distill(d, rho, y, filt, rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "pvalues.txt", res.u_star, fmt="%.17g")
    np.savetxt(out / "response_final.txt", res.y_final, fmt="%.17g")
    summary = {"layers": len(rho), "p": d.p, "n": d.n, "filter": asdict(filt), "seed": args.seed}
    if args.k:
        table = load_table(args.k, args.method, args.table_p or d.p) if args.method else None
        stat, pval = renyi_test(res.u_star, args.k, table)
        summary.update(k=args.k, statistic=float(stat), pvalue=float(pval))
    _write_json(summary, out / "summary.json")
    print(f"{d.p} p-values written to {out / 'pvalues.txt'}")


def build_parser():
    ap = argparse.ArgumentParser(prog="renyidistill", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("partition", help="greedy layering of a design")
    sp.add_argument("--design", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--diagnostics")
    sp.add_argument("--q0", type=float, default=0.9)
    sp.add_argument("--q1", type=float, default=0.8)
    sp.add_argument("--k-ref", type=int, default=20)
    sp.add_argument("--priority", help="file of 1-based predictor indices scanned first")
    sp.set_defaults(func=cmd_partition)

    sp = sub.add_parser("build-null-table", help="simulate and save a null table")
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--samples", type=int, default=1_000_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--method", choices=("partial_sums", "order_statistics"), default="partial_sums")
    sp.add_argument("--p", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_build_null_table)

    sp = sub.add_parser("renyi-test", help="outlier test of a p-value file")
    sp.add_argument("--pvalues", required=True)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--table")
    sp.add_argument("--method", choices=("partial_sums", "order_statistics"),
                    help="table family; default picks the exact table for this p when shipped")
    sp.add_argument("--p", type=int)
    sp.set_defaults(func=cmd_renyi_test)

    sp = sub.add_parser("power-bound", help="analytic power lower bound as JSON")
    sp.add_argument("--beta", help="file of coefficients")
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--p", type=int)
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.set_defaults(func=cmd_power_bound)

    sp = sub.add_parser("simulate", help="power simulation from a config file")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--workers", type=int)
    sp.add_argument("--timing", action="store_true", help="fill the seconds column")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("distill", help="distill a response against a design")
    sp.add_argument("--design", required=True)
    sp.add_argument("--partition", required=True)
    sp.add_argument("--response", required=True)
    sp.add_argument("--filter", default="k4,1")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--covariates", help="dense text file, one covariate per column")
    sp.add_argument("--intercept", action="store_true")
    sp.add_argument("--rank-normalize", choices=("off", "resampled", "fixed"), default="off")
    sp.add_argument("--k", type=int, help="also run the outlier test with this k")
    sp.add_argument("--method", choices=("partial_sums", "order_statistics"))
    sp.add_argument("--table-p", type=int)
    sp.set_defaults(func=cmd_distill)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
