"""Command-line entry point: ``glinear {train,eval,grid,synth,bench}``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import bench
from .data import is_synth_spec, load_series, make_dataset, parse_synth_spec, synth_generate, write_csv
from .errors import ConfigError
from .models import DEFAULT_MA_KERNEL, VARIANTS, PredictorConfig, load_checkpoint, save_checkpoint
from .training import TrainConfig, evaluate, train

log = logging.getLogger("glinear")

DESK_MAX_EPOCHS = 10
DESK_PATIENCE = 3


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _model_list(text: str) -> tuple[str, ...]:
    models = tuple(v.strip().lower() for v in text.split(",") if v.strip())
    bad = [m for m in models if m not in VARIANTS]
    if bad or not models:
        raise argparse.ArgumentTypeError(f"models must be drawn from {','.join(VARIANTS)}, got {text!r}")
    return models


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate (default 0.001)")
    p.add_argument("--batch", type=int, default=16, help="batch size (default 16)")
    p.add_argument("--epochs", type=int, default=20, help="maximum epochs (default 20)")
    p.add_argument("--patience", type=int, default=5, help="early-stopping patience on validation MSE")
    p.add_argument("--seed", type=int, default=0)


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--individual", action=argparse.BooleanOptionalAction, default=None,
                   help="per-channel weights (default: on for glinear, off otherwise)")
    p.add_argument("--kernel", type=int, default=DEFAULT_MA_KERNEL, help="DLinear moving-average kernel")


def _train_config(args) -> TrainConfig:
    return TrainConfig(learning_rate=args.lr, batch_size=args.batch, max_epochs=args.epochs,
                       patience=min(args.patience, args.epochs), seed=args.seed)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glinear", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for epoch logs, -vv for debug")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model and report test metrics")
    p.add_argument("--model", choices=VARIANTS, required=True)
    p.add_argument("--data", required=True, help="CSV path or synthetic spec kind:key=value,...")
    p.add_argument("--seq-len", type=int, default=336)
    p.add_argument("--pred-len", type=int, default=96)
    _add_train_flags(p)
    _add_model_flags(p)
    p.add_argument("--out", type=Path, help="checkpoint path (.npz)")
    p.add_argument("--history", type=Path, help="write per-epoch JSON-lines log here")

    p = sub.add_parser("eval", help="evaluate a saved checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")

    p = sub.add_parser("grid", help="run an experiment grid and write a report")
    p.add_argument("--model", type=_model_list, default=VARIANTS, help="comma list of models")
    p.add_argument("--data", required=True)
    p.add_argument("--experiment", type=int, choices=(1, 2),
                   help="1: L=336 over all horizons; 2: all lookbacks for T in {24, 720}")
    p.add_argument("--seq-len", type=_int_list, help="comma list of lookbacks")
    p.add_argument("--pred-len", type=_int_list, help="comma list of horizons")
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--preset", choices=("desk",), help="desk: ETTh1/synthetic only, at most 10 epochs")
    _add_train_flags(p)
    _add_model_flags(p)
    p.add_argument("--out", type=Path)
    p.add_argument("--format", choices=bench.FORMATS, help="default: inferred from --out, else markdown")

    p = sub.add_parser("synth", help="write a synthetic series as CSV")
    p.add_argument("--data", required=True, help="synthetic spec, e.g. sinusoid:period=24,n=2000,c=3")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("bench", help="per-epoch training time and per-sample inference latency")
    p.add_argument("--model", type=_model_list, default=("nlinear", "glinear"))
    p.add_argument("--data", required=True)
    p.add_argument("--seq-len", type=int, default=336)
    p.add_argument("--pred-len", type=int, default=720)
    _add_train_flags(p)
    _add_model_flags(p)
    p.set_defaults(epochs=3)
    p.add_argument("--out", type=Path)
    p.add_argument("--format", choices=bench.FORMATS)
    return parser


def _write_or_print(rows, out, fmt) -> None:
    if out is None:
        print(bench.render_markdown(rows), end="")
        return
    fmt = fmt or bench.format_for(out)
    bench.emit_report(rows, fmt, out)
    print(f"wrote {len(rows)} rows to {out}")


def cmd_train(args) -> int:
    series = load_series(args.data)
    ds = make_dataset(series, args.seq_len, args.pred_len)
    cfg = PredictorConfig(args.model, args.seq_len, args.pred_len, ds.channels,
                          individual=args.individual, ma_kernel=args.kernel)
    model, history = train(cfg, ds, _train_config(args))
    mse, mae = evaluate(model, ds, "test")
    print(f"{args.model} L={args.seq_len} T={args.pred_len} epochs={history.epochs} "
          f"best={history.best_epoch + 1} test mse={mse:.6f} mae={mae:.6f}")
    if args.out:
        save_checkpoint(args.out, model.config, model.params)
        print(f"checkpoint: {args.out}")
    if args.history:
        history.write_jsonl(args.history)
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    cfg = model.config
    ds = make_dataset(load_series(args.data), cfg.seq_len, cfg.pred_len)
    mse, mae = evaluate(model, ds, args.split)
    print(f"{cfg.variant} L={cfg.seq_len} T={cfg.pred_len} {args.split} mse={mse:.6f} mae={mae:.6f}")
    return 0


def grid_from_args(args) -> bench.ExperimentGrid:
    seq_lens, pred_lens = args.seq_len, args.pred_len
    if args.experiment:
        preset = bench.EXPERIMENT_1 if args.experiment == 1 else bench.EXPERIMENT_2
        seq_lens = seq_lens or preset["seq_lens"]
        pred_lens = pred_lens or preset["pred_lens"]
    if not seq_lens or not pred_lens:
        raise ConfigError("grid needs --seq-len and --pred-len lists, or --experiment")
    tc = _train_config(args)
    if args.preset == "desk":
        if not is_synth_spec(args.data) and not Path(args.data).stem.lower().startswith("etth1"):
            raise ConfigError(f"the desk preset only runs ETTh1 or synthetic data, got {args.data!r}")
        tc = replace(tc, max_epochs=min(tc.max_epochs, DESK_MAX_EPOCHS),
                     patience=min(tc.patience, DESK_PATIENCE))
    return bench.ExperimentGrid(args.data, args.model, seq_lens, pred_lens, tc, args.repetitions,
                                args.individual, args.kernel)


def cmd_grid(args) -> int:
    grid = grid_from_args(args)

    def progress(row):
        log.info("%s %s L=%d T=%d: %s mse=%.4f mae=%.4f %s", row.dataset, row.model, row.L, row.T,
                 row.status, row.mse, row.mae, row.note)

    rows = bench.run_grid(grid, workers=args.workers, progress=progress)
    _write_or_print(rows, args.out, args.format)
    errors = [r for r in rows if r.status == "error"]
    skipped = [r for r in rows if r.status == "skipped"]
    if skipped:
        print(f"{len(skipped)} cells skipped", file=sys.stderr)
    if errors:
        print(f"{len(errors)} cells failed", file=sys.stderr)
        return 1
    return 0


def cmd_synth(args) -> int:
    if not is_synth_spec(args.data):
        raise ConfigError(f"not a synthetic spec: {args.data!r}")
    kind, n, c, params, seed = parse_synth_spec(args.data)
    write_csv(synth_generate(kind, n, c, params, seed), args.out)
    print(f"wrote {n} rows x {c} channels to {args.out}")
    return 0


def cmd_bench(args) -> int:
    series = load_series(args.data)
    ds = make_dataset(series, args.seq_len, args.pred_len)
    tc = _train_config(args)
    rows = []
    for m in args.model:
        cfg = PredictorConfig(m, args.seq_len, args.pred_len, ds.channels,
                              individual=args.individual, ma_kernel=args.kernel)
        epoch_s, infer_ms = bench.measure_runtime(cfg, ds, tc)
        rows.append(bench.ReportRow(args.data, m, args.seq_len, args.pred_len, args.seed,
                                    epoch_s=epoch_s, infer_ms=infer_ms, epochs=tc.max_epochs,
                                    note="runtime only"))
        print(f"{m:8s} epoch {epoch_s:.3f} s  inference {infer_ms:.4f} ms/sample")
    if len(rows) > 1:
        base = rows[0]
        for r in rows[1:]:
            print(f"{r.model}/{base.model} per-epoch ratio {r.epoch_s / base.epoch_s:.2f}")
    if args.out:
        bench.emit_report(rows, args.format or bench.format_for(args.out), args.out)
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "grid": cmd_grid, "synth": cmd_synth, "bench": cmd_bench}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
