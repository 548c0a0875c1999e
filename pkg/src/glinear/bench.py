"""Experiment grids, runtime measurement and result tables.

A grid is the product models x lookbacks x horizons x repetitions over one
dataset.  Every cell gets its own seed derived from the base seed and the
cell coordinates, so a cell's metrics do not depend on which other cells run
or in what order.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .data import RawSeries, WindowedDataset, load_series, make_dataset
from .errors import ConfigError, MeasurementError
from .models import DEFAULT_MA_KERNEL, VARIANTS, Model, PredictorConfig, forward
from .training import TrainConfig, evaluate, train

log = logging.getLogger(__name__)

EXPERIMENT_1 = {"seq_lens": (336,), "pred_lens": (12, 24, 48, 96, 192, 336, 720)}
EXPERIMENT_2 = {"seq_lens": (48, 72, 96, 120, 144, 168, 192, 336, 504, 672, 720), "pred_lens": (24, 720)}

COLUMNS = ("dataset", "model", "L", "T", "seed", "mse", "mae", "epoch_s", "infer_ms", "epochs")
EXTRA_COLUMNS = ("status", "note")
FORMATS = ("csv", "markdown", "json-lines")


@dataclass(frozen=True)
class ExperimentGrid:
    dataset: str  # CSV path or synthetic spec
    models: tuple[str, ...]
    seq_lens: tuple[int, ...]
    pred_lens: tuple[int, ...]
    train: TrainConfig = TrainConfig()
    repetitions: int = 1
    individual: bool | None = None  # None: each variant's default
    ma_kernel: int = DEFAULT_MA_KERNEL

    def __post_init__(self):
        for name in ("models", "seq_lens", "pred_lens"):
            value = tuple(getattr(self, name))
            if not value:
                raise ConfigError(f"grid {name} must be nonempty")
            object.__setattr__(self, name, value)
        bad = [m for m in self.models if m not in VARIANTS]
        if bad:
            raise ConfigError(f"unknown models {bad}; expected a subset of {VARIANTS}")
        if any(int(v) < 1 for v in self.seq_lens + self.pred_lens):
            raise ConfigError("lookback and horizon lengths must be >= 1")
        if self.repetitions < 1:
            raise ConfigError(f"repetitions must be >= 1, got {self.repetitions}")

    def cells(self) -> list[tuple[str, int, int, int]]:
        """Grid positions ``(model, L, T, repetition)`` in report order."""
        return [
            (m, int(L), int(T), r)
            for L in self.seq_lens
            for T in self.pred_lens
            for m in self.models
            for r in range(self.repetitions)
        ]


@dataclass
class ReportRow:
    dataset: str
    model: str
    L: int
    T: int
    seed: int
    mse: float = float("nan")
    mae: float = float("nan")
    epoch_s: float = float("nan")
    infer_ms: float = float("nan")
    epochs: int = 0
    status: str = "ok"  # ok | skipped | error
    note: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def metrics(self) -> tuple:
        return (self.mse, self.mae, self.epochs)


def cell_seed(base_seed: int, model: str, seq_len: int, pred_len: int, repetition: int) -> int:
    """64-bit seed: BLAKE2b (8-byte digest, little-endian) of ``base|model|L|T|rep``."""
    key = f"{int(base_seed)}|{model}|{int(seq_len)}|{int(pred_len)}|{int(repetition)}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


# ---------------------------------------------------------------- timing


def time_inference(model: Model, dataset: WindowedDataset, split_name: str = "test",
                   batch_size: int = 256) -> float:
    """Milliseconds of forward time per window over a whole split (batching excluded)."""
    n = dataset.count(split_name)
    if n == 0:
        raise MeasurementError(f"{split_name} split has no windows to time")
    total = 0.0
    for x, _ in dataset.iter_batches(split_name, batch_size):
        t0 = time.perf_counter()
        forward(model.config, model.params, x)
        total += time.perf_counter() - t0
    return 1e3 * total / n


def warm_epoch_seconds(seconds) -> float:
    """Mean epoch time with the first (warm-up) epoch excluded."""
    if len(seconds) < 2:
        raise MeasurementError(f"need at least 2 epochs to exclude warm-up, got {len(seconds)}")
    return float(np.mean(seconds[1:]))


def measure_runtime(model, dataset: WindowedDataset, cfg: TrainConfig = TrainConfig()) -> tuple[float, float]:
    """(per-epoch training seconds, per-sample inference ms) for one training run.

    Training runs exactly ``cfg.max_epochs`` epochs (early stopping is
    disabled) so that every model is timed over the same number of epochs.
    """
    if cfg.max_epochs < 2:
        raise MeasurementError(f"runtime measurement needs max_epochs >= 2, got {cfg.max_epochs}")
    cfg = replace(cfg, patience=cfg.max_epochs)
    trained, history = train(model, dataset, cfg)
    return warm_epoch_seconds(history.seconds), time_inference(trained, dataset)


# ---------------------------------------------------------------- grid


class _DatasetCache:
    """One windowed dataset per (L, T), built once and shared read-only by cells."""

    def __init__(self, series: RawSeries):
        self.series = series
        self._items: dict = {}
        self._lock = threading.Lock()

    def get(self, seq_len: int, pred_len: int) -> WindowedDataset:
        key = (seq_len, pred_len)
        with self._lock:
            if key not in self._items:
                try:
                    self._items[key] = make_dataset(self.series, seq_len, pred_len)
                except ConfigError as exc:
                    self._items[key] = exc
            item = self._items[key]
        if isinstance(item, ConfigError):
            raise item
        return item


def run_cell(grid: ExperimentGrid, cache: _DatasetCache, model: str, seq_len: int, pred_len: int,
             repetition: int) -> ReportRow:
    seed = cell_seed(grid.train.seed, model, seq_len, pred_len, repetition)
    row = ReportRow(grid.dataset, model, seq_len, pred_len, seed)
    try:
        ds = cache.get(seq_len, pred_len)
    except ConfigError as exc:
        row.status, row.note = "skipped", str(exc)
        return row
    try:
        cfg = PredictorConfig(model, seq_len, pred_len, ds.channels, individual=grid.individual,
                              ma_kernel=grid.ma_kernel)
    except ConfigError as exc:
        row.status, row.note = "skipped", str(exc)
        return row
    try:
        trained, history = train(cfg, ds, replace(grid.train, seed=seed))
        row.mse, row.mae = evaluate(trained, ds, "test")
        row.epochs = history.epochs
        if history.epochs >= 2:
            row.epoch_s = warm_epoch_seconds(history.seconds)
        else:
            row.epoch_s = history.seconds[0]
            row.note = "single epoch, warm-up included in epoch_s"
        row.infer_ms = time_inference(trained, ds)
    except Exception as exc:  # a failed cell is recorded, the grid continues
        log.exception("cell %s L=%d T=%d rep=%d failed", model, seq_len, pred_len, repetition)
        row.status, row.note = "error", f"{type(exc).__name__}: {exc}"
    return row


def run_grid(grid: ExperimentGrid, workers: int = 1, series: RawSeries | None = None,
             progress=None) -> list[ReportRow]:
    """Train and evaluate every grid cell; rows come back in grid order.

    With ``workers > 1`` cells run on a thread pool.  Timing columns are then
    subject to contention; use ``workers=1`` for runtime comparisons.
    """
    series = load_series(grid.dataset) if series is None else series
    cache = _DatasetCache(series)
    cells = grid.cells()

    def work(cell):
        row = run_cell(grid, cache, *cell)
        if progress is not None:
            progress(row)
        return row

    if workers <= 1:
        return [work(c) for c in cells]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(work, cells))  # map preserves grid order


# ---------------------------------------------------------------- reports


def _fmt_float(v: float) -> str:
    return repr(float(v))


def _row_values(row: ReportRow) -> list[str]:
    d = asdict(row)
    return [_fmt_float(d[k]) if isinstance(d[k], float) else str(d[k]) for k in COLUMNS + EXTRA_COLUMNS]


def rank_marks(rows) -> dict[int, str]:
    """Row index -> "best" / "second" by MSE within each (dataset, T), ok rows only."""
    groups: dict = {}
    for i, r in enumerate(rows):
        if r.ok and np.isfinite(r.mse):
            groups.setdefault((r.dataset, r.T), []).append(i)
    marks = {}
    for idx in groups.values():
        ranked = sorted(idx, key=lambda i: (rows[i].mse, i))
        marks[ranked[0]] = "best"
        if len(ranked) > 1:
            marks[ranked[1]] = "second"
    return marks


def render_markdown(rows) -> str:
    marks = rank_marks(rows)
    header = list(COLUMNS) + ["status"]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for i, r in enumerate(rows):
        mse = f"{r.mse:.4f}"
        if marks.get(i) == "best":
            mse = f"**{mse}**"
        elif marks.get(i) == "second":
            mse = f"<u>{mse}</u>"
        cells = [r.dataset, r.model, str(r.L), str(r.T), str(r.seed), mse, f"{r.mae:.4f}",
                 f"{r.epoch_s:.3f}", f"{r.infer_ms:.4f}", str(r.epochs), r.status]
        lines.append("| " + " | ".join(cells) + " |")
    lines.append("")
    lines.append("Metrics are in standardized units. Bold: lowest MSE per (dataset, T); underlined: second lowest.")
    return "\n".join(lines) + "\n"


def emit_report(rows, fmt: str, path) -> Path:
    rows = list(rows)
    if not rows:
        raise ValueError("cannot emit an empty report")
    if fmt not in FORMATS:
        raise ConfigError(f"unknown report format {fmt!r}; expected one of {FORMATS}")
    path = Path(path)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(COLUMNS + EXTRA_COLUMNS)
            for r in rows:
                w.writerow(_row_values(r))
    elif fmt == "json-lines":
        with open(path, "w") as fh:
            for r in rows:
                rec = {k: None if isinstance(v, float) and not np.isfinite(v) else v for k, v in asdict(r).items()}
                fh.write(json.dumps(rec, allow_nan=False) + "\n")
    else:
        path.write_text(render_markdown(rows))
    return path


_TYPES = {f.name: f.type for f in fields(ReportRow)}


def _coerce(name: str, value):
    kind = _TYPES[name]
    if value is None or value == "":
        return float("nan") if kind == "float" else ("" if kind == "str" else 0)
    if kind == "int":
        return int(value)
    if kind == "float":
        return float(value)
    return str(value)


def format_for(path) -> str:
    suffix = Path(path).suffix.lower()
    if suffix == ".csv":
        return "csv"
    if suffix in (".jsonl", ".json"):
        return "json-lines"
    if suffix in (".md", ".markdown"):
        return "markdown"
    raise ConfigError(f"cannot infer report format from {path!s}; use .csv, .jsonl or .md")


def parse_report(path, fmt: str | None = None) -> list[ReportRow]:
    """Read rows back from a CSV or JSON-lines report."""
    fmt = format_for(path) if fmt is None else fmt
    rows = []
    with open(path, newline="") as fh:
        if fmt == "csv":
            records = list(csv.DictReader(fh))
        elif fmt == "json-lines":
            records = [json.loads(line) for line in fh if line.strip()]
        else:
            raise ConfigError("markdown reports are for reading by people; parse csv or json-lines instead")
    for rec in records:
        rows.append(ReportRow(**{k: _coerce(k, v) for k, v in rec.items() if k in _TYPES}))
    return rows
