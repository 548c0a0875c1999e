"""Lookbacks 48..720 at horizons 24 and 720.

    python scripts/experiment_varying_lookback.py --data data/ETTh1.csv --models nlinear,glinear
"""

import argparse
import logging
from pathlib import Path

from glinear import bench
from glinear.models import VARIANTS
from glinear.training import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--data", default="data/ETTh1.csv")
    ap.add_argument("--models", default=",".join(VARIANTS))
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("results/varying_lookback"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    grid = bench.ExperimentGrid(args.data, tuple(args.models.split(",")), **bench.EXPERIMENT_2,
                                train=TrainConfig(max_epochs=args.epochs, patience=min(5, args.epochs), seed=args.seed))
    rows = bench.run_grid(grid, progress=lambda r: logging.info("%s L=%d T=%d mse=%.4f %s",
                                                                 r.model, r.L, r.T, r.mse, r.status))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    bench.emit_report(rows, "csv", args.out.with_suffix(".csv"))

    # one line per (model, T): MSE as the lookback grows
    for T in bench.EXPERIMENT_2["pred_lens"]:
        print(f"\nT={T}  " + "  ".join(f"{L:>6d}" for L in grid.seq_lens))
        for m in grid.models:
            cells = {r.L: r for r in rows if r.model == m and r.T == T}
            print(f"{m:8s} " + "  ".join(f"{cells[L].mse:6.4f}" if cells[L].ok else "  skip" for L in grid.seq_lens))


if __name__ == "__main__":
    main()
