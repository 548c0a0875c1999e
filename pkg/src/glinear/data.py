"""CSV ingestion, chronological splits, standardization and sliding windows.

Benchmark CSVs have a ``date`` column followed by one numeric column per
channel.  Values are z-scored per channel with statistics from the train
range only, then cut into ``(L, T)`` windows.  Validation and test windows
may take their lookback from the preceding region; their targets never leave
the region.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ConfigError, ConstantChannelError, DataFormatError, OrderingError

SPLITS = ("train", "val", "test")
SYNTH_KINDS = ("sinusoid", "sinusoid+trend", "amplitude-modulated", "level-shift")

# Month-based borders of the ETT benchmark protocol: 12/4/4 months of 30 days.
ETT_HOURLY_BOUNDARIES = (12 * 30 * 24, 16 * 30 * 24, 20 * 30 * 24)
ETT_MINUTE_BOUNDARIES = tuple(4 * b for b in ETT_HOURLY_BOUNDARIES)


@dataclass(frozen=True)
class RawSeries:
    timestamps: np.ndarray  # datetime64[s], shape (N,)
    values: np.ndarray  # (N, C)
    channel_names: tuple[str, ...]
    granularity: str = ""
    name: str = ""

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError(f"values must be (N, C), got shape {self.values.shape}")
        if len(self.timestamps) != self.values.shape[0]:
            raise ValueError(f"{len(self.timestamps)} timestamps for {self.values.shape[0]} rows")
        if len(self.channel_names) != self.values.shape[1]:
            raise ValueError(f"{len(self.channel_names)} channel names for {self.values.shape[1]} columns")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]


def _describe_step(seconds: float) -> str:
    if seconds <= 0 or not math.isfinite(seconds):
        return ""
    for unit, size in (("day", 86400), ("hour", 3600), ("minute", 60), ("second", 1)):
        if seconds % size == 0:
            k = int(seconds // size)
            return f"{k} {unit}" + ("s" if k != 1 else "")
    return f"{seconds:g} seconds"


def _parse_timestamp(text: str, row: int) -> np.datetime64:
    try:
        return np.datetime64(text.strip().replace(" ", "T"), "s")
    except ValueError:
        raise DataFormatError(f"row {row}, column 'date': cannot parse timestamp {text!r}", row=row, column=0)


def load_csv(path) -> RawSeries:
    """Read a ``date,<channel>,...`` CSV.  Rows are numbered from 1 after the header."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: file is empty") from None
        if len(header) < 2 or header[0].strip().lower() != "date":
            raise DataFormatError(f"{path}: header must start with 'date' followed by channel columns")
        names = tuple(h.strip() for h in header[1:])
        stamps, rows = [], []
        for i, rec in enumerate(reader, start=1):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DataFormatError(f"row {i}: expected {len(header)} cells, found {len(rec)}", row=i)
            stamps.append(_parse_timestamp(rec[0], i))
            vals = []
            for j, cell in enumerate(rec[1:], start=1):
                try:
                    v = float(cell)
                except ValueError:
                    v = math.nan
                if cell.strip() == "" or not math.isfinite(v):
                    raise DataFormatError(
                        f"row {i}, column {header[j]!r}: missing or non-numeric value {cell!r}", row=i, column=j
                    )
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    ts = np.array(stamps, dtype="datetime64[s]")
    steps = np.diff(ts).astype(np.int64)
    if np.any(steps <= 0):
        i = int(np.flatnonzero(steps <= 0)[0]) + 2
        raise OrderingError(f"row {i}: timestamp {ts[i - 1]} does not come after {ts[i - 2]}", row=i, column=0)
    gran = _describe_step(float(np.median(steps))) if steps.size else ""
    return RawSeries(ts, np.asarray(rows, dtype=np.float64), names, gran, path.stem)


def write_csv(series: RawSeries, path) -> Path:
    """Inverse of :func:`load_csv`; floats are written with ``repr`` so they round-trip exactly."""
    path = Path(path)
    stamps = np.datetime_as_string(series.timestamps, unit="s")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("date",) + tuple(series.channel_names))
        for t, row in zip(stamps, series.values):
            w.writerow([t.replace("T", " ")] + [repr(float(v)) for v in row])
    return path


# ---------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitSpec:
    """Chronological split by fractions, or by explicit end indices of each region."""

    train: float = 0.7
    val: float = 0.1
    test: float = 0.2
    boundaries: tuple[int, int, int] | None = None

    def __post_init__(self):
        if self.boundaries is None:
            fr = [Fraction(str(f)) for f in (self.train, self.val, self.test)]
            if any(f <= 0 for f in fr) or sum(fr) != 1:
                raise ConfigError(f"split fractions must be positive and sum to 1, got {self.train}/{self.val}/{self.test}")
        else:
            b = tuple(int(v) for v in self.boundaries)
            if len(b) != 3 or not 0 < b[0] < b[1] < b[2]:
                raise ConfigError(f"split boundaries must be increasing positive ends, got {self.boundaries}")
            object.__setattr__(self, "boundaries", b)

    def ends(self, n: int) -> tuple[int, int, int]:
        if self.boundaries is not None:
            if self.boundaries[2] > n:
                raise ConfigError(f"split boundaries {self.boundaries} exceed series length {n}")
            return self.boundaries
        ft, fv = Fraction(str(self.train)), Fraction(str(self.val))
        return math.floor(ft * n), math.floor((ft + fv) * n), n


def default_split(name: str) -> SplitSpec:
    """Benchmark split conventions: ETT uses fixed month borders, the rest 0.7/0.1/0.2."""
    stem = Path(name).stem.lower()
    if stem.startswith("etth"):
        return SplitSpec(boundaries=ETT_HOURLY_BOUNDARIES)
    if stem.startswith("ettm"):
        return SplitSpec(boundaries=ETT_MINUTE_BOUNDARIES)
    return SplitSpec(0.7, 0.1, 0.2)


def split(series_or_n, spec: SplitSpec, seq_len: int | None = None,
          pred_len: int | None = None) -> tuple[range, range, range]:
    """Target ranges of the train, validation and test regions.

    With ``seq_len``/``pred_len`` given, each region (val/test extended back by
    ``seq_len`` rows of context) must hold at least one window.
    """
    n = series_or_n if isinstance(series_or_n, (int, np.integer)) else series_or_n.n
    b1, b2, b3 = spec.ends(int(n))
    regions = (range(0, b1), range(b1, b2), range(b2, b3))
    if seq_len is not None and pred_len is not None:
        need = seq_len + pred_len
        for name, r in zip(SPLITS, regions):
            ext = region_with_context(r, seq_len)
            if len(ext) < need:
                raise ConfigError(
                    f"{name} region has {len(ext)} rows (incl. lookback context); "
                    f"seq_len + pred_len = {need} rows are required"
                )
    return regions


def region_with_context(region: range, seq_len: int) -> range:
    return range(max(region.start - seq_len, 0), region.stop)


# ---------------------------------------------------------------- standardization


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean


def standardize(series_or_values, train_range: range, channel_names=None) -> tuple[Standardizer, np.ndarray]:
    """Z-score every channel with train-range mean and population std."""
    if isinstance(series_or_values, RawSeries):
        values = series_or_values.values
        channel_names = series_or_values.channel_names
    else:
        values = np.asarray(series_or_values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    if len(train_range) == 0:
        raise ConfigError("train range is empty")
    train = values[train_range.start:train_range.stop]
    mean = train.mean(axis=0)
    std = np.sqrt(((train - mean) ** 2).mean(axis=0))
    for c in range(values.shape[1]):
        if not std[c] > 0:
            raise ConstantChannelError(channel_names[c] if channel_names is not None else c)
    scaler = Standardizer(mean, std)
    return scaler, scaler.transform(values)


# ---------------------------------------------------------------- windows


def window_starts(region: range, seq_len: int, pred_len: int) -> np.ndarray:
    count = len(region) - seq_len - pred_len + 1
    if count <= 0:
        return np.zeros(0, dtype=np.int64)
    return np.arange(region.start, region.start + count, dtype=np.int64)


def gather_windows(values: np.ndarray, starts: np.ndarray, seq_len: int, pred_len: int):
    """Stack inputs ``(n, L, C)`` and targets ``(n, T, C)`` for the given window starts."""
    starts = np.asarray(starts, dtype=np.int64)
    x = values[starts[:, None] + np.arange(seq_len)]
    y = values[starts[:, None] + seq_len + np.arange(pred_len)]
    return x, y


def make_windows(values, seq_len: int, pred_len: int, region: range | None = None):
    """All windows inside ``region``: input rows ``[i, i+L)``, target rows ``[i+L, i+L+T)``."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    region = range(values.shape[0]) if region is None else region
    return gather_windows(values, window_starts(region, seq_len, pred_len), seq_len, pred_len)


@dataclass
class WindowedDataset:
    values: np.ndarray  # standardized (N, C)
    seq_len: int
    pred_len: int
    regions: dict[str, range]  # target regions
    starts: dict[str, np.ndarray]
    scaler: Standardizer | None = None
    name: str = ""
    channel_names: tuple[str, ...] = field(default_factory=tuple)

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def count(self, split_name: str) -> int:
        return int(self.starts[split_name].size)

    def batch(self, split_name: str, index=None):
        starts = self.starts[split_name] if index is None else self.starts[split_name][index]
        return gather_windows(self.values, starts, self.seq_len, self.pred_len)

    def iter_batches(self, split_name: str, batch_size: int):
        starts = self.starts[split_name]
        for i in range(0, starts.size, batch_size):
            yield gather_windows(self.values, starts[i:i + batch_size], self.seq_len, self.pred_len)


def make_dataset(series: RawSeries, seq_len: int, pred_len: int, spec: SplitSpec | None = None,
                 scale: bool = True) -> WindowedDataset:
    spec = default_split(series.name) if spec is None else spec
    regions = split(series, spec, seq_len, pred_len)
    if scale:
        scaler, values = standardize(series, regions[0])
    else:
        scaler, values = None, series.values.copy()
    starts = {
        name: window_starts(region_with_context(r, seq_len) if name != "train" else r, seq_len, pred_len)
        for name, r in zip(SPLITS, regions)
    }
    return WindowedDataset(
        values=values,
        seq_len=seq_len,
        pred_len=pred_len,
        regions=dict(zip(SPLITS, regions)),
        starts=starts,
        scaler=scaler,
        name=series.name,
        channel_names=series.channel_names,
    )


# ---------------------------------------------------------------- synthetic series


SYNTH_DEFAULTS = {
    "amplitude": 1.0,
    "period": 24.0,
    "noise": 0.0,
    "slope": 0.01,  # sinusoid+trend
    "mod_depth": 0.5,  # amplitude-modulated
    "mod_period": 168.0,
    "shift": 3.0,  # level-shift
    "shift_at": 0.8,  # fraction of n (<1) or absolute index
    "step_minutes": 60.0,
}


def synth_generate(kind: str, n: int, c: int = 1, params: dict | None = None, seed: int = 0) -> RawSeries:
    """Closed-form synthetic series, one phase-shifted copy per channel.

    ============================  ==============================================
    ``sinusoid``                  ``A sin(2 pi (t mod P)/P + phi_c) + noise``
    ``sinusoid+trend``            sinusoid ``+ slope * t``
    ``amplitude-modulated``       ``A (1 + d sin(2 pi t/Pm)) sin(2 pi t/P + phi_c)``
    ``level-shift``               sinusoid ``+ shift * [t >= t0]``
    ============================  ==============================================

    Phases ``phi_c = 2 pi c / C`` and noise draws are deterministic given ``seed``.
    """
    if kind not in SYNTH_KINDS:
        raise ConfigError(f"unknown synthetic kind {kind!r}; expected one of {SYNTH_KINDS}")
    if n < 1 or c < 1:
        raise ConfigError(f"synthetic series needs n >= 1 and c >= 1, got n={n}, c={c}")
    unknown = set(params or {}) - set(SYNTH_DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown synthetic parameters {sorted(unknown)} for {kind!r}")
    p = {**SYNTH_DEFAULTS, **(params or {})}
    rng = np.random.default_rng(seed)
    t = np.arange(n, dtype=np.float64)[:, None]
    phase = 2.0 * np.pi * np.arange(c, dtype=np.float64)[None, :] / c
    period = p["period"]
    base = p["amplitude"] * np.sin(2.0 * np.pi * np.mod(t, period) / period + phase)
    if kind == "sinusoid+trend":
        base = base + p["slope"] * t
    elif kind == "amplitude-modulated":
        envelope = 1.0 + p["mod_depth"] * np.sin(2.0 * np.pi * np.mod(t, p["mod_period"]) / p["mod_period"])
        base = envelope * base
    elif kind == "level-shift":
        t0 = p["shift_at"] * n if p["shift_at"] < 1 else p["shift_at"]
        base = base + p["shift"] * (t >= int(t0))
    if p["noise"] > 0:
        base = base + p["noise"] * rng.standard_normal(base.shape)
    step = np.timedelta64(int(round(p["step_minutes"] * 60)), "s")
    stamps = np.datetime64("2016-07-01T00:00:00", "s") + step * np.arange(n)
    names = tuple(f"ch{i}" for i in range(c))
    return RawSeries(stamps, base, names, _describe_step(p["step_minutes"] * 60), f"{kind}")


def parse_synth_spec(text: str) -> tuple[str, int, int, dict, int]:
    """Parse ``kind:param=value,...`` into ``(kind, n, c, params, seed)``.

    ``n`` (default 2000), ``c`` (default 1) and ``seed`` (default 0) are
    pulled out; everything else goes to the generator.
    """
    kind, _, rest = text.partition(":")
    kind = kind.strip()
    if kind not in SYNTH_KINDS:
        raise ConfigError(f"unknown synthetic kind {kind!r}; expected one of {SYNTH_KINDS}")
    params: dict = {}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"bad synthetic parameter {item!r}; expected key=value")
        try:
            params[key.strip()] = float(val)
        except ValueError:
            raise ConfigError(f"synthetic parameter {key!r} must be numeric, got {val!r}") from None
    n = int(params.pop("n", 2000))
    c = int(params.pop("c", 1))
    seed = int(params.pop("seed", 0))
    return kind, n, c, params, seed


def is_synth_spec(text: str) -> bool:
    return str(text).partition(":")[0].strip() in SYNTH_KINDS


def load_series(source: str) -> RawSeries:
    """A CSV path or a synthetic spec string."""
    if is_synth_spec(source):
        kind, n, c, params, seed = parse_synth_spec(source)
        series = synth_generate(kind, n, c, params, seed)
        return RawSeries(series.timestamps, series.values, series.channel_names, series.granularity, source)
    return load_csv(source)
