#!/usr/bin/env python
"""Power curves: rejection rates of slope = g over a grid of nulls, using the
small static design with no contamination (the size panel)."""

import argparse
import sys

from orthopanel.estimator import EstConfig
from orthopanel.simulate import (DgpConfig, power_csv_text, power_curve,
                                 write_power_csv)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="power.csv")
    ap.add_argument("--profile", choices=["desk", "paper"], default="desk")
    ap.add_argument("--reps", type=int)
    ap.add_argument("--splits", type=int)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--c", type=float, default=0.0)
    ap.add_argument("--methods", default="cgk,orth-mean")
    ap.add_argument("--grid", default="0.4:1.6:0.1",
                    help="start:stop:step, inclusive")
    args = ap.parse_args()

    paper = args.profile == "paper"
    reps = args.reps or (1000 if paper else 200)
    splits = args.splits or (20 if paper else 5)
    start, stop, step = (float(v) for v in args.grid.split(":"))
    count = int((stop - start) / step + 1e-9) + 1
    grid = [round(start + i * step, 10) for i in range(count)]
    methods = [m for m in args.methods.split(",") if m]

    dgp = DgpConfig(N=100, T=12, beta0=0.0, c=args.c, seed=args.seed)
    est = EstConfig(folds=5, splits=splits, first_stage="blundell-bond",
                    seed=args.seed)
    rows = power_curve(dgp, methods, est, reps, grid, threads=args.threads,
                       progress=True)

    echo = {"script": "run_power", "reps": reps, "splits": splits,
            "seed": args.seed, "c": args.c, "grid": args.grid,
            "methods": ",".join(methods)}
    write_power_csv(args.out, rows, config_echo=echo)
    sys.stdout.write(power_csv_text(rows, config_echo=echo))


if __name__ == "__main__":
    main()
