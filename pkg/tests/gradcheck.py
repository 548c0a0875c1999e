"""Finite-difference check of model parameter gradients on batch MSE."""

from __future__ import annotations

import numpy as np

from glinear import core
from glinear.models import PredictorConfig, backward, forward, init_params
from glinear.training import mse, mse_grad

REL_TOL = 1e-4
FD_FLOOR = 1e-8


def random_config(variant: str, rng: np.random.Generator) -> PredictorConfig:
    L = int(rng.integers(2, 17))
    T = int(rng.integers(1, 9))
    C = int(rng.integers(1, 4))
    kernel = int(rng.choice([k for k in (1, 3, 5, 25) if k <= 2 * L - 1]))
    return PredictorConfig(variant, L, T, C, individual=bool(rng.integers(2)), ma_kernel=kernel,
                           activation=str(rng.choice(["tanh", "exact"])))


def perturb_params(cfg, rng):
    params = init_params(cfg, rng)
    for name, p in params.items():
        # move RevIN's affine off identity and make biases nonzero so every path is exercised
        p += rng.normal(0.0, 0.3, p.shape)
    return params


def worst_relative_error(cfg: PredictorConfig, rng: np.random.Generator, batch: int | None = None):
    """Max relative error over entries with |fd| > FD_FLOOR, and how many entries were checked."""
    B = int(rng.integers(1, 5)) if batch is None else batch
    params = perturb_params(cfg, rng)
    x = rng.normal(0.0, 2.0, size=(B, cfg.seq_len, cfg.channels))
    y = rng.normal(size=(B, cfg.pred_len, cfg.channels))
    pred, cache = forward(cfg, params, x)
    grads, _ = backward(cfg, params, cache, mse_grad(pred, y))
    worst, checked = 0.0, 0
    for name in params:
        base = params[name].copy()

        def loss(theta):
            trial = params.copy()
            trial[name] = theta.reshape(base.shape)
            return mse(forward(cfg, trial, x)[0], y)

        fd = core.finite_diff_grad(loss, base.ravel(), h=1e-5)
        g = grads[name].ravel()
        mask = np.abs(fd) > FD_FLOOR
        if mask.any():
            worst = max(worst, float(np.max(np.abs(g[mask] - fd[mask]) / np.abs(fd[mask]))))
            checked += int(mask.sum())
    return worst, checked
