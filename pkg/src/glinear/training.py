"""Losses, the Adam optimizer and the seeded training loop."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import WindowedDataset
from .errors import ConfigError, ShapeError, TrainingError
from .models import Model, ParamSet, PredictorConfig, backward, forward, init_params

log = logging.getLogger(__name__)

EVAL_BATCH = 256


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    max_epochs: int = 20
    patience: int = 5
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not 1 <= self.patience <= self.max_epochs:
            raise ConfigError(f"patience must be in [1, max_epochs={self.max_epochs}], got {self.patience}")


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_mse: list = field(default_factory=list)
    val_mae: list = field(default_factory=list)
    seconds: list = field(default_factory=list)  # training pass only, validation excluded
    best_epoch: int = -1

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    def records(self) -> list[dict]:
        return [
            {"epoch": i + 1, "train_loss": tl, "val_mse": vm, "val_mae": va, "seconds": s}
            for i, (tl, vm, va, s) in enumerate(zip(self.train_loss, self.val_mse, self.val_mae, self.seconds))
        ]

    def write_jsonl(self, path) -> Path:
        path = Path(path)
        with open(path, "w") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec) + "\n")
        return path

    @classmethod
    def read_jsonl(cls, path) -> "TrainHistory":
        hist = cls()
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    hist.train_loss.append(rec["train_loss"])
                    hist.val_mse.append(rec["val_mse"])
                    hist.val_mae.append(rec["val_mae"])
                    hist.seconds.append(rec["seconds"])
        if hist.val_mse:
            hist.best_epoch = int(np.argmin(hist.val_mse))
        return hist


def _same_shape(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    return pred, target


def mse(pred, target) -> float:
    pred, target = _same_shape(pred, target)
    return float(np.mean((pred - target) ** 2))


def mae(pred, target) -> float:
    pred, target = _same_shape(pred, target)
    return float(np.mean(np.abs(pred - target)))


def mse_grad(pred, target) -> np.ndarray:
    pred, target = _same_shape(pred, target)
    return 2.0 * (pred - target) / pred.size


def adam_step(params: ParamSet, grads: dict, state: AdamState, cfg: TrainConfig) -> tuple[ParamSet, AdamState]:
    """One bias-corrected Adam update, applied in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r} at step {state.t + 1}")
    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        m, v = state.m[name], state.v[name]
        tmp = np.empty_like(p)
        m *= b1
        np.multiply(g, 1.0 - b1, out=tmp)
        m += tmp
        v *= b2
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - b2
        v += tmp
        # p -= lr * (m / bc1) / (sqrt(v / bc2) + eps)
        np.divide(v, bc2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += cfg.adam_eps
        np.divide(m, tmp, out=tmp)
        tmp *= cfg.learning_rate / bc1
        p -= tmp
    if hasattr(params, "version"):
        params.version += 1
    return params, state


def evaluate(model: Model, dataset: WindowedDataset, split_name: str = "test",
             batch_size: int = EVAL_BATCH) -> tuple[float, float]:
    """MSE and MAE over every window of a split, in standardized units."""
    n = dataset.count(split_name)
    if n == 0:
        raise ConfigError(f"{split_name} split has no windows")
    sq = ab = 0.0
    count = 0
    for x, y in dataset.iter_batches(split_name, batch_size):
        pred = forward(model.config, model.params, x)[0]
        diff = pred - y
        sq += float(np.sum(diff * diff))
        ab += float(np.sum(np.abs(diff)))
        count += diff.size
    return sq / count, ab / count


def _rngs(seed: int):
    init_seq, shuffle_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_seq), np.random.default_rng(shuffle_seq)


def train_epoch(model: Model, dataset: WindowedDataset, cfg: TrainConfig, state: AdamState,
                rng: np.random.Generator) -> float:
    """Shuffle, then one pass of Adam steps over all train windows; returns mean batch loss."""
    starts = dataset.starts["train"]
    order = rng.permutation(starts.size)
    losses = []
    for i in range(0, order.size, cfg.batch_size):
        x, y = dataset.batch("train", order[i:i + cfg.batch_size])
        pred, cache = forward(model.config, model.params, x)
        losses.append(mse(pred, y))
        grads, _ = backward(model.config, model.params, cache, mse_grad(pred, y))
        adam_step(model.params, grads, state, cfg)
    return float(np.mean(losses))


def train(model, dataset: WindowedDataset, cfg: TrainConfig = TrainConfig()) -> tuple[Model, TrainHistory]:
    """Train with early stopping on validation MSE; returns the best-validation snapshot.

    ``model`` is a :class:`PredictorConfig` (weights initialized from
    ``cfg.seed``) or a :class:`Model` whose parameters are copied.
    """
    if dataset.count("train") == 0 or dataset.count("val") == 0:
        raise ConfigError(
            f"training needs non-empty train and val splits, got {dataset.count('train')} and {dataset.count('val')} windows"
        )
    init_rng, shuffle_rng = _rngs(cfg.seed)
    if isinstance(model, PredictorConfig):
        model = Model(model, init_params(model, init_rng))
    else:
        model = Model(model.config, model.params.copy())
    state = AdamState.zeros_like(model.params)
    history = TrainHistory()
    best_params, best_val, wait = model.params.copy(), np.inf, 0
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        try:
            loss = train_epoch(model, dataset, cfg, state, shuffle_rng)
        except TrainingError as exc:
            raise TrainingError(f"epoch {epoch}: {exc}", epoch=epoch) from exc
        elapsed = time.perf_counter() - t0
        if not np.isfinite(loss):
            raise TrainingError(f"training loss diverged to {loss} in epoch {epoch}", epoch=epoch)
        val_mse, val_mae = evaluate(model, dataset, "val")
        history.train_loss.append(loss)
        history.val_mse.append(val_mse)
        history.val_mae.append(val_mae)
        history.seconds.append(elapsed)
        log.info("epoch %d  train %.6f  val mse %.6f  mae %.6f  (%.2fs)", epoch, loss, val_mse, val_mae, elapsed)
        if val_mse < best_val:
            best_val, best_params, wait = val_mse, model.params.copy(), 0
            history.best_epoch = epoch - 1
        else:
            wait += 1
            if wait >= cfg.patience:
                log.info("early stop after epoch %d (best %d)", epoch, history.best_epoch + 1)
                break
    return Model(model.config, best_params), history
