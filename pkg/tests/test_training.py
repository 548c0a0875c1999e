import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from glinear import core
from glinear.data import RawSeries, SplitSpec, load_series, make_dataset
from glinear.errors import ConfigError, ShapeError, TrainingError
from glinear.models import VARIANTS, Model, ParamSet, PredictorConfig, backward, forward, init_params
from glinear.training import (
    AdamState,
    TrainConfig,
    TrainHistory,
    adam_step,
    evaluate,
    mae,
    mse,
    mse_grad,
    train,
)
from gradcheck import perturb_params
from oracles import adam_scalar


def _series(values, name="fixture"):
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    n = values.shape[0]
    stamps = np.datetime64("2020-01-01T00:00:00", "s") + np.arange(n) * np.timedelta64(3600, "s")
    return RawSeries(stamps, values, tuple(f"c{i}" for i in range(values.shape[1])), "1h", name)


def test_metric_examples():
    assert mse([1.0, 2.0], [1.0, 4.0]) == 2.0
    assert mae([1.0, 2.0], [1.0, 4.0]) == 1.0
    x = np.random.default_rng(0).normal(size=(2, 3, 2))
    assert mse(x, x) == 0.0 and mae(x, x) == 0.0


def test_metrics_match_loop_oracle():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(3, 4, 2)), rng.normal(size=(3, 4, 2))
    flat = list(zip(a.ravel(), b.ravel()))
    assert mse(a, b) == pytest.approx(sum((p - q) ** 2 for p, q in flat) / len(flat), rel=1e-14)
    assert mae(a, b) == pytest.approx(sum(abs(p - q) for p, q in flat) / len(flat), rel=1e-14)


def test_metric_shape_errors():
    for f in (mse, mae, mse_grad):
        with pytest.raises(ShapeError):
            f(np.zeros((1, 2, 1)), np.zeros((1, 3, 1)))


def test_mse_grad():
    x = np.random.default_rng(2).normal(size=(2, 3, 2))
    np.testing.assert_array_equal(mse_grad(x, x), 0.0)
    assert mse_grad([3.0], [1.0])[0] == 4.0
    y = np.random.default_rng(3).normal(size=x.shape)
    fd = core.finite_diff_grad(lambda v: mse(v.reshape(x.shape), y), x.ravel(), h=1e-6)
    np.testing.assert_allclose(mse_grad(x, y).ravel(), fd, rtol=1e-6)


# ---------------------------------------------------------------- Adam


def _scalar_params(v):
    return ParamSet({"theta": np.array([v])})


def test_adam_zero_gradient_is_identity():
    p = ParamSet({"a": np.array([1.0, -2.0]), "b": np.array([[3.0]])})
    before = p.copy()
    state = AdamState.zeros_like(p)
    adam_step(p, {k: np.zeros_like(v) for k, v in p.items()}, state, TrainConfig())
    assert state.t == 1 and p.version == 1
    for k in p:
        np.testing.assert_array_equal(p[k], before[k])


def test_adam_first_step():
    p = _scalar_params(0.0)
    adam_step(p, {"theta": np.array([0.5])}, AdamState.zeros_like(p), TrainConfig(learning_rate=1e-3))
    # bias correction makes the first step lr * g / (|g| + eps)
    assert p["theta"][0] == pytest.approx(-1e-3 * 0.5 / (0.5 + 1e-8), rel=1e-12)


@given(st.floats(-10, 10), st.floats(-5, 5), st.integers(1, 6))
def test_adam_matches_scalar_oracle(theta, g, steps):
    p = _scalar_params(theta)
    state = AdamState.zeros_like(p)
    grads = [g * (k + 1) / steps for k in range(steps)]
    for gk in grads:
        adam_step(p, {"theta": np.array([gk])}, state, TrainConfig())
    assert p["theta"][0] == pytest.approx(adam_scalar(theta, grads), rel=1e-12, abs=1e-15)
    assert np.all(state.v["theta"] >= 0)


def test_adam_two_constant_steps():
    p = _scalar_params(1.0)
    state = AdamState.zeros_like(p)
    for _ in range(2):
        adam_step(p, {"theta": np.array([0.25])}, state, TrainConfig())
    assert p["theta"][0] == pytest.approx(adam_scalar(1.0, [0.25, 0.25]), rel=1e-14)


def test_adam_errors():
    p = _scalar_params(1.0)
    with pytest.raises(TrainingError, match="theta"):
        adam_step(p, {"theta": np.array([np.nan])}, AdamState.zeros_like(p), TrainConfig())
    with pytest.raises(ShapeError):
        adam_step(p, {"theta": np.zeros(2)}, AdamState.zeros_like(p), TrainConfig())


@pytest.mark.parametrize("kwargs", [dict(learning_rate=0), dict(batch_size=0), dict(max_epochs=0),
                                    dict(max_epochs=3, patience=4), dict(patience=0)])
def test_train_config_validation(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


@pytest.mark.parametrize("variant", VARIANTS)
def test_small_step_decreases_single_sample_loss(variant):
    rng = np.random.default_rng(4)
    cfg = PredictorConfig(variant, 8, 4, 2, ma_kernel=3)
    p = perturb_params(cfg, rng)
    x, y = rng.normal(size=(1, 8, 2)), rng.normal(size=(1, 4, 2))
    pred, cache = forward(cfg, p, x)
    before = mse(pred, y)
    grads, _ = backward(cfg, p, cache, mse_grad(pred, y))
    adam_step(p, grads, AdamState.zeros_like(p), TrainConfig(learning_rate=1e-5))
    assert mse(forward(cfg, p, x)[0], y) < before


# ---------------------------------------------------------------- training loop


@pytest.fixture(scope="module")
def sinusoid():
    return make_dataset(load_series("sinusoid:period=24,n=1200"), 48, 12)


def test_training_is_deterministic(sinusoid):
    cfg = PredictorConfig("glinear", 48, 12, 1)
    tc = TrainConfig(max_epochs=3, patience=3, seed=7)
    (m1, h1), (m2, h2) = train(cfg, sinusoid, tc), train(cfg, sinusoid, tc)
    assert h1.train_loss == h2.train_loss and h1.val_mse == h2.val_mse
    for k in m1.params:
        np.testing.assert_array_equal(m1.params[k], m2.params[k])
    m3, h3 = train(cfg, sinusoid, TrainConfig(max_epochs=3, patience=3, seed=8))
    assert h3.train_loss != h1.train_loss


def test_history_lengths_and_finiteness(sinusoid):
    _, h = train(PredictorConfig("linear", 48, 12, 1), sinusoid, TrainConfig(max_epochs=4, patience=4))
    assert h.epochs == 4 == len(h.val_mse) == len(h.val_mae) == len(h.seconds)
    assert all(math.isfinite(v) for v in h.train_loss) and all(s > 0 for s in h.seconds)


def test_returns_best_validation_snapshot(sinusoid):
    # a large learning rate makes validation MSE bounce, so the best epoch is usually not the last
    cfg = PredictorConfig("nlinear", 48, 12, 1)
    model, h = train(cfg, sinusoid, TrainConfig(learning_rate=0.05, max_epochs=8, patience=8, seed=1))
    assert h.best_epoch == int(np.argmin(h.val_mse))
    assert evaluate(model, sinusoid, "val")[0] == min(h.val_mse)


def test_early_stopping_honours_patience():
    ds = make_dataset(load_series("sinusoid:period=24,n=1200,noise=1.0"), 48, 12)
    _, h = train(PredictorConfig("linear", 48, 12, 1), ds, TrainConfig(learning_rate=0.05, max_epochs=20, patience=2))
    assert h.epochs < 20
    assert h.epochs - 1 - h.best_epoch == 2


def test_train_continues_from_model_without_mutating_it(sinusoid):
    cfg = PredictorConfig("linear", 48, 12, 1)
    start = Model(cfg, init_params(cfg, 0))
    before = start.params.copy()
    train(start, sinusoid, TrainConfig(max_epochs=2, patience=2))
    for k in before:
        np.testing.assert_array_equal(start.params[k], before[k])


def test_constant_series_solved_by_persistence():
    ds = make_dataset(_series(np.full((2000, 2), 3.5)), 24, 12, SplitSpec(0.7, 0.1, 0.2), scale=False)
    cfg = PredictorConfig("nlinear", 24, 12, 2)
    zero = Model(cfg, ParamSet({"w": np.zeros((12, 24)), "b": np.zeros(12)}))
    assert evaluate(zero, ds, "test") == (0.0, 0.0)
    model, _ = train(cfg, ds, TrainConfig())
    assert evaluate(model, ds, "test")[0] <= 1e-10


def test_empty_split_and_divergence_errors():
    ds = make_dataset(load_series("sinusoid:n=300"), 24, 12)
    ds.starts["val"] = ds.starts["val"][:0]
    with pytest.raises(ConfigError):
        train(PredictorConfig("linear", 24, 12, 1), ds, TrainConfig(max_epochs=1, patience=1))
    with pytest.raises(ConfigError):
        evaluate(Model(PredictorConfig("linear", 24, 12, 1), init_params(PredictorConfig("linear", 24, 12, 1))), ds, "val")
    huge = make_dataset(_series(np.random.default_rng(0).normal(size=300) * 1e200), 24, 12,
                        SplitSpec(0.7, 0.1, 0.2), scale=False)
    with pytest.raises(TrainingError) as info:
        with np.errstate(all="ignore"):
            train(PredictorConfig("linear", 24, 12, 1), huge, TrainConfig(max_epochs=2, patience=1))
    assert info.value.epoch == 1


def test_history_jsonl_round_trip(tmp_path, sinusoid):
    _, h = train(PredictorConfig("dlinear", 48, 12, 1), sinusoid, TrainConfig(max_epochs=3, patience=3))
    back = TrainHistory.read_jsonl(h.write_jsonl(tmp_path / "h.jsonl"))
    assert back.records() == h.records()
    assert back.best_epoch == h.best_epoch
