"""Per-epoch training time and per-sample inference latency, L=336, T=720, batch 16.

Models are timed one after another in this process; the first epoch of each
run is treated as warm-up and excluded.
"""

import argparse
from pathlib import Path

from glinear import bench
from glinear.data import load_series, make_dataset
from glinear.models import PredictorConfig
from glinear.training import TrainConfig

ENTRIES = (
    ("linear", False),
    ("nlinear", False),
    ("dlinear", False),
    ("rlinear", False),
    ("glinear", False),
    ("glinear", True),
)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", default="data/ETTh1.csv")
    ap.add_argument("--seq-len", type=int, default=336)
    ap.add_argument("--pred-len", type=int, default=720)
    ap.add_argument("--epochs", type=int, default=3)
    ap.add_argument("--out", type=Path, default=Path("results/runtime.csv"))
    args = ap.parse_args()

    ds = make_dataset(load_series(args.data), args.seq_len, args.pred_len)
    tc = TrainConfig(max_epochs=args.epochs, patience=args.epochs)
    rows = []
    print(f"{'model':22s} {'epoch s':>9s} {'infer ms':>9s}")
    for variant, individual in ENTRIES:
        cfg = PredictorConfig(variant, args.seq_len, args.pred_len, ds.channels, individual=individual)
        epoch_s, infer_ms = bench.measure_runtime(cfg, ds, tc)
        label = f"{variant} ({'per-channel' if individual else 'shared'})"
        print(f"{label:22s} {epoch_s:9.3f} {infer_ms:9.4f}", flush=True)
        rows.append(bench.ReportRow(args.data, variant, args.seq_len, args.pred_len, 0, epoch_s=epoch_s,
                                    infer_ms=infer_ms, epochs=args.epochs, note=label))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    bench.emit_report(rows, "csv", args.out)


if __name__ == "__main__":
    main()
