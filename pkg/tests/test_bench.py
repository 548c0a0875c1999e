import csv
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from glinear import bench, cli
from glinear.bench import ExperimentGrid, ReportRow, cell_seed, emit_report, measure_runtime, parse_report, run_grid
from glinear.data import load_series, make_dataset
from glinear.errors import ConfigError, MeasurementError
from glinear.models import VARIANTS, PredictorConfig
from glinear.training import TrainConfig

SINE = "sinusoid:period=24,n=1000"
QUICK = TrainConfig(max_epochs=3, patience=3)


def test_cell_seed_is_stable_and_distinct():
    s = cell_seed(0, "glinear", 336, 96, 0)
    assert s == cell_seed(0, "glinear", 336, 96, 0)
    assert 0 <= s < 2**64
    others = {cell_seed(1, "glinear", 336, 96, 0), cell_seed(0, "nlinear", 336, 96, 0),
              cell_seed(0, "glinear", 335, 96, 0), cell_seed(0, "glinear", 336, 97, 0),
              cell_seed(0, "glinear", 336, 96, 1)}
    assert s not in others and len(others) == 5


def test_grid_validation_and_cells():
    with pytest.raises(ConfigError):
        ExperimentGrid(SINE, (), (24,), (12,))
    with pytest.raises(ConfigError):
        ExperimentGrid(SINE, ("arima",), (24,), (12,))
    with pytest.raises(ConfigError):
        ExperimentGrid(SINE, ("linear",), (24,), (12,), repetitions=0)
    g = ExperimentGrid("ETTh1.csv", VARIANTS, **bench.EXPERIMENT_1)
    assert len(g.cells()) == 7 * len(VARIANTS)
    g = ExperimentGrid("ETTh1.csv", ("glinear",), **bench.EXPERIMENT_2, repetitions=2)
    assert len(g.cells()) == 11 * 2 * 2


def test_sinusoid_grid_rows_are_accurate():
    rows = run_grid(ExperimentGrid(SINE, VARIANTS, (48,), (12,), TrainConfig(max_epochs=20)))
    assert [r.model for r in rows] == list(VARIANTS)
    for r in rows:
        assert r.ok and r.mse < 1e-3 and r.mae >= 0
        assert r.epoch_s > 0 and r.infer_ms > 0 and r.epochs == 20


def test_grid_is_deterministic_and_cells_independent():
    grid = ExperimentGrid(SINE, ("linear", "glinear", "dlinear"), (24, 48), (12,), QUICK, repetitions=2)
    a, b = run_grid(grid), run_grid(grid)
    assert [r.metrics() for r in a] == [r.metrics() for r in b]
    # the two repetitions differ because their seeds differ
    assert a[0].seed != a[1].seed and a[0].mse != a[1].mse
    sub = run_grid(ExperimentGrid(SINE, ("glinear",), (48,), (12,), QUICK, repetitions=2))
    full = {(r.model, r.L, r.seed): r.metrics() for r in a}
    for r in sub:
        assert full[(r.model, r.L, r.seed)] == r.metrics()


def test_threaded_grid_matches_serial():
    grid = ExperimentGrid(SINE, ("linear", "rlinear"), (24, 36), (12,), QUICK)
    serial, threaded = run_grid(grid), run_grid(grid, workers=3)
    assert [(r.model, r.L, r.metrics()) for r in serial] == [(r.model, r.L, r.metrics()) for r in threaded]


def test_infeasible_cells_are_skipped_and_failures_recorded(monkeypatch):
    grid = ExperimentGrid("sinusoid:n=300", ("linear", "nlinear", "dlinear"), (24, 200), (12,), QUICK,
                          ma_kernel=25)
    real_train = bench.train

    def flaky(cfg, ds, tc):
        if cfg.variant == "nlinear":
            raise RuntimeError("boom")
        return real_train(cfg, ds, tc)

    monkeypatch.setattr(bench, "train", flaky)
    rows = run_grid(grid)
    status = {(r.model, r.L): r.status for r in rows}
    assert status[("linear", 24)] == "ok" and status[("dlinear", 24)] == "ok"
    assert status[("nlinear", 24)] == "error" and "boom" in rows[1].note
    assert all(status[(m, 200)] == "skipped" for m in ("linear", "nlinear", "dlinear"))
    assert "required" in rows[3].note


def test_measure_runtime():
    ds = make_dataset(load_series(SINE), 48, 12)
    with pytest.raises(MeasurementError):
        measure_runtime(PredictorConfig("linear", 48, 12, 1), ds, TrainConfig(max_epochs=1, patience=1))
    for v in VARIANTS:
        epoch_s, infer_ms = measure_runtime(PredictorConfig(v, 48, 12, 1), ds, QUICK)
        assert epoch_s > 0 and infer_ms > 0
    t1 = measure_runtime(PredictorConfig("glinear", 48, 12, 1), ds, QUICK)[0]
    t2 = measure_runtime(PredictorConfig("glinear", 48, 12, 1), ds, QUICK)[0]
    assert 1 / 3 <= t1 / t2 <= 3


# ---------------------------------------------------------------- reports


def _rows(n, seed=0):
    rng = np.random.default_rng(seed)
    return [ReportRow("ETTh1", VARIANTS[i % 5], 336, [96, 192][i % 2], int(rng.integers(2**63)), float(rng.random()),
                      float(rng.random()), float(rng.random()) + 1e-3, float(rng.random()) + 1e-4,
                      int(rng.integers(1, 21))) for i in range(n)]


def test_one_row_csv(tmp_path):
    path = emit_report(_rows(1), "csv", tmp_path / "r.csv")
    lines = path.read_text().splitlines()
    assert len(lines) == 2
    assert lines[0].split(",")[:10] == list(bench.COLUMNS)


@given(st.lists(st.floats(0, 1e6, allow_nan=False), min_size=1, max_size=5))
def test_csv_round_trip_and_idempotence(tmp_path_factory, values):
    d = tmp_path_factory.mktemp("rep")
    rows = [ReportRow("d", "linear", 1, 2, 3, v, v / 3, v + 1e-3, 1e-4, 4) for v in values]
    back = parse_report(emit_report(rows, "csv", d / "a.csv"))
    for r, b in zip(rows, back):
        for k in ("mse", "mae", "epoch_s", "infer_ms"):
            assert float(f"{getattr(b, k):.12g}") == float(f"{getattr(r, k):.12g}")
        assert (b.dataset, b.model, b.L, b.T, b.seed, b.epochs) == (r.dataset, r.model, r.L, r.T, r.seed, r.epochs)
    emit_report(back, "csv", d / "b.csv")
    assert (d / "a.csv").read_bytes() == (d / "b.csv").read_bytes()


def test_json_lines_round_trip(tmp_path):
    rows = _rows(4)
    rows[2].status, rows[2].note = "skipped", "too short"
    path = emit_report(rows, "json-lines", tmp_path / "r.jsonl")
    assert parse_report(path) == rows
    assert json.loads(path.read_text().splitlines()[0])["model"] == "linear"


def test_markdown_flags_best_and_second(tmp_path):
    rows = [ReportRow("ETTh1", "nlinear", 336, 96, 0, 0.40, 0.41, 1.0, 0.1, 5),
            ReportRow("ETTh1", "glinear", 336, 96, 0, 0.38, 0.40, 1.0, 0.1, 5)]
    text = emit_report(rows, "markdown", tmp_path / "r.md").read_text()
    assert text.count("**") == 2 and "**0.3800**" in text and "<u>0.4000</u>" in text
    rows = _rows(10)
    marks = bench.rank_marks(rows)
    for T in (96, 192):
        group = [i for i, r in enumerate(rows) if r.T == T]
        assert sum(marks.get(i) == "best" for i in group) == 1
        assert sum(marks.get(i) == "second" for i in group) == 1
        best = next(i for i in group if marks.get(i) == "best")
        assert rows[best].mse == min(rows[i].mse for i in group)


def test_report_errors(tmp_path):
    with pytest.raises(ValueError):
        emit_report([], "csv", tmp_path / "x.csv")
    with pytest.raises(OSError):
        emit_report(_rows(1), "csv", tmp_path / "missing" / "x.csv")
    with pytest.raises(ConfigError):
        emit_report(_rows(1), "xlsx", tmp_path / "x.xlsx")
    with pytest.raises(ConfigError):
        parse_report(tmp_path / "x.txt")


# ---------------------------------------------------------------- CLI


def test_cli_synth_train_eval(tmp_path, capsys):
    data = tmp_path / "sine.csv"
    assert cli.main(["synth", "--data", "sinusoid:period=24,n=800,c=2", "--out", str(data)]) == 0
    with open(data) as fh:
        assert next(csv.reader(fh)) == ["date", "ch0", "ch1"]
    ckpt = tmp_path / "m.npz"
    hist = tmp_path / "h.jsonl"
    assert cli.main(["train", "--model", "glinear", "--data", str(data), "--seq-len", "48", "--pred-len", "12",
                     "--epochs", "2", "--out", str(ckpt), "--history", str(hist)]) == 0
    out = capsys.readouterr().out
    trained_mse = out.split("test mse=")[1].split()[0]
    assert cli.main(["eval", "--checkpoint", str(ckpt), "--data", str(data)]) == 0
    assert f"mse={trained_mse}" in capsys.readouterr().out
    assert len(hist.read_text().splitlines()) == 2


def test_cli_grid_exit_codes(tmp_path, monkeypatch):
    out = tmp_path / "g.csv"
    args = ["grid", "--model", "linear,nlinear", "--data", "sinusoid:n=400", "--seq-len", "24,300",
            "--pred-len", "12", "--epochs", "2", "--out", str(out)]
    assert cli.main(args) == 0  # skipped cells do not fail the run
    rows = parse_report(out)
    assert [r.status for r in rows] == ["ok", "ok", "skipped", "skipped"]
    monkeypatch.setattr(bench, "train", lambda *a: (_ for _ in ()).throw(RuntimeError("boom")))
    assert cli.main(args) == 1


def test_cli_desk_preset_and_experiment_lists(tmp_path):
    other = tmp_path / "electricity.csv"
    other.write_text("date,a\n2020-01-01 00:00:00,1\n")
    assert cli.main(["grid", "--data", str(other), "--experiment", "1", "--preset", "desk"]) == 2
    args = cli.build_parser().parse_args(["grid", "--data", "sinusoid", "--experiment", "2", "--preset", "desk",
                                          "--epochs", "40", "--model", "glinear"])
    grid = cli.grid_from_args(args)
    assert grid.seq_lens == bench.EXPERIMENT_2["seq_lens"] and grid.pred_lens == (24, 720)
    assert grid.train.max_epochs == cli.DESK_MAX_EPOCHS and grid.models == ("glinear",)
    with pytest.raises(SystemExit):
        cli.build_parser().parse_args(["grid", "--data", "x", "--model", "arima"])


def test_cli_bench(tmp_path, capsys):
    out = tmp_path / "b.jsonl"
    assert cli.main(["bench", "--data", SINE, "--seq-len", "48", "--pred-len", "12", "--epochs", "2",
                     "--out", str(out)]) == 0
    assert "glinear/nlinear per-epoch ratio" in capsys.readouterr().out
    rows = parse_report(out)
    assert [r.model for r in rows] == ["nlinear", "glinear"] and all(r.epoch_s > 0 for r in rows)
