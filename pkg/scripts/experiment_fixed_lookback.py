"""Fixed lookback L=336 over horizons 12..720, all five models.

    python scripts/experiment_fixed_lookback.py --data data/ETTh1.csv --out results/fixed_lookback
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
    ap.add_argument("--repetitions", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("results/fixed_lookback"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    grid = bench.ExperimentGrid(args.data, tuple(args.models.split(",")), **bench.EXPERIMENT_1,
                                train=TrainConfig(max_epochs=args.epochs, patience=min(5, args.epochs), seed=args.seed),
                                repetitions=args.repetitions)
    rows = bench.run_grid(grid, progress=lambda r: logging.info("%s L=%d T=%d mse=%.4f mae=%.4f %s",
                                                                 r.model, r.L, r.T, r.mse, r.mae, r.status))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    bench.emit_report(rows, "csv", args.out.with_suffix(".csv"))
    bench.emit_report(rows, "markdown", args.out.with_suffix(".md"))
    print(bench.render_markdown(rows))


if __name__ == "__main__":
    main()
