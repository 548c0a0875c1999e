"""Reversible instance normalization (RevIN).

Each window is standardized per instance and channel with its own lookback
mean and standard deviation, passed through a learnable per-channel affine
(gamma, beta), and the model output is mapped back with the inverse affine
and the same statistics.

Gradients treat ``mu`` and ``sigma`` as functions of the input (full chain
rule).  Parameter gradients do not depend on that choice because the
statistics only depend on data.

The public functions take ``(B, steps, C)`` arrays.  The ``*_cm`` functions
work on channel-major ``(C, B, steps)`` arrays, which is the layout the
models compute in; reductions then run over the contiguous last axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DegenerateAffineError, EmptyWindowError, ShapeError, StateError

DEFAULT_EPS = 1e-5
MIN_ABS_GAMMA = 1e-12


@dataclass(frozen=True)
class RevinState:
    mu: np.ndarray  # (B, C)
    sigma: np.ndarray  # (B, C)
    gamma: np.ndarray  # (C,)
    beta: np.ndarray  # (C,)
    eps: float = DEFAULT_EPS

    @property
    def batch(self) -> int:
        return self.mu.shape[0]

    @property
    def channels(self) -> int:
        return self.mu.shape[1]


@dataclass
class RevinCache:
    """Channel-major intermediates of one normalize/denormalize pair."""

    state: RevinState
    mu_cm: np.ndarray  # (C, B)
    sigma_cm: np.ndarray  # (C, B)
    z: np.ndarray  # (C, B, L) pre-affine z-scores
    o: np.ndarray | None = field(default=None)  # (C, B, T) model output fed to denormalize


def _to_cm(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a.transpose(2, 0, 1))


def _from_cm(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a.transpose(1, 2, 0))


def _check_gamma(gamma: np.ndarray) -> None:
    small = np.abs(gamma) < MIN_ABS_GAMMA
    if np.any(small):
        raise DegenerateAffineError(
            f"RevIN gamma is ~0 for channels {np.flatnonzero(small).tolist()}; denormalization is undefined"
        )


def stats_cm(xc: np.ndarray, eps: float = DEFAULT_EPS) -> tuple[np.ndarray, np.ndarray]:
    if xc.shape[-1] == 0:
        raise EmptyWindowError("cannot compute RevIN statistics over an empty lookback window")
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    mu = xc.mean(axis=-1)
    d = xc - mu[..., None]
    var = np.einsum("...l,...l->...", d, d) / xc.shape[-1]
    return mu, np.sqrt(var + eps)


def revin_forward_cm(xc: np.ndarray, gamma, beta, eps: float = DEFAULT_EPS) -> tuple[np.ndarray, RevinCache]:
    """Statistics plus affine normalization of a ``(C, B, L)`` batch."""
    mu, sigma = stats_cm(xc, eps)
    gamma = np.asarray(gamma, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if gamma.shape != (xc.shape[0],) or beta.shape != (xc.shape[0],):
        raise ShapeError(f"affine parameters must have shape ({xc.shape[0]},), got {gamma.shape} and {beta.shape}")
    z = (xc - mu[..., None]) / sigma[..., None]
    state = RevinState(mu=mu.T, sigma=sigma.T, gamma=gamma, beta=beta, eps=eps)
    return gamma[:, None, None] * z + beta[:, None, None], RevinCache(state, mu, sigma, z)


def denormalize_cm(oc: np.ndarray, cache: RevinCache) -> np.ndarray:
    s = cache.state
    _check_gamma(s.gamma)
    y = (oc - s.beta[:, None, None]) / s.gamma[:, None, None]
    y *= cache.sigma_cm[..., None]
    y += cache.mu_cm[..., None]
    cache.o = oc
    return y


def denormalize_backward_cm(gc: np.ndarray, cache: RevinCache):
    """Backward through ``Y = (o - beta) / gamma * sigma + mu`` (channel-major).

    Returns ``(grad_o, grad_gamma, grad_beta, grad_mu, grad_sigma)``.
    """
    if cache.o is None:
        raise StateError("RevIN cache has no denormalize input; denormalize through the cache first")
    if gc.shape != cache.o.shape:
        raise StateError(f"gradient shape {gc.shape} does not match cached output {cache.o.shape}")
    s = cache.state
    inv_gamma = (1.0 / s.gamma)[:, None, None]
    centered = (cache.o - s.beta[:, None, None]) * inv_gamma
    grad_o = gc * cache.sigma_cm[..., None] * inv_gamma
    grad_beta = -grad_o.sum(axis=(1, 2))
    grad_gamma = -np.einsum("cbt,cbt->c", grad_o, centered)
    grad_mu = gc.sum(axis=-1)
    grad_sigma = np.einsum("cbt,cbt->cb", gc, centered)
    return grad_o, grad_gamma, grad_beta, grad_mu, grad_sigma


def normalize_backward_cm(g_xt: np.ndarray, cache: RevinCache, grad_mu=None, grad_sigma=None,
                          need_input: bool = True):
    """Backward through ``x_tilde = gamma * (x - mu) / sigma + beta`` (channel-major).

    ``grad_mu``/``grad_sigma`` carry gradient that reached the statistics from
    the denormalize side.  Returns ``(grad_x or None, grad_gamma, grad_beta)``.
    """
    z = cache.z
    if g_xt.shape != z.shape:
        raise StateError(f"gradient shape {g_xt.shape} does not match cached input {z.shape}")
    grad_gamma = np.einsum("cbl,cbl->c", g_xt, z)
    grad_beta = g_xt.sum(axis=(1, 2))
    if not need_input:
        return None, grad_gamma, grad_beta
    sigma = cache.sigma_cm
    grad_z = g_xt * cache.state.gamma[:, None, None]
    # z = (x - mu) / sigma, with d mu / dx_t = 1/L and d sigma / dx_t = z_t / L
    g_mu = -grad_z.sum(axis=-1) / sigma
    g_sigma = -np.einsum("cbl,cbl->cb", grad_z, z) / sigma
    if grad_mu is not None:
        g_mu = g_mu + grad_mu
    if grad_sigma is not None:
        g_sigma = g_sigma + grad_sigma
    length = z.shape[-1]
    grad_x = grad_z / sigma[..., None] + (g_mu[..., None] + g_sigma[..., None] * z) / length
    return grad_x, grad_gamma, grad_beta


# ---------------------------------------------------------------- (B, steps, C) API


def _check_tensor(x, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"expected (B, steps, C) {what}, got shape {x.shape}")
    return x


def revin_stats(x, eps: float = DEFAULT_EPS) -> tuple[np.ndarray, np.ndarray]:
    """Per-(instance, channel) mean and sqrt(population variance + eps), each ``(B, C)``."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    mu, sigma = stats_cm(_to_cm(_check_tensor(x, "input")), eps)
    return mu.T.copy(), sigma.T.copy()


def revin_state(x, gamma=None, beta=None, eps: float = DEFAULT_EPS) -> RevinState:
    x = _check_tensor(x, "input")
    c = x.shape[2]
    gamma = np.ones(c) if gamma is None else np.asarray(gamma, dtype=np.float64)
    beta = np.zeros(c) if beta is None else np.asarray(beta, dtype=np.float64)
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"affine parameters must have shape ({c},), got {gamma.shape} and {beta.shape}")
    mu, sigma = revin_stats(x, eps)
    return RevinState(mu=mu, sigma=sigma, gamma=gamma, beta=beta, eps=eps)


def _check_state(a: np.ndarray, state: RevinState, what: str) -> None:
    if a.shape[0] != state.batch or a.shape[2] != state.channels:
        raise ShapeError(
            f"{what} of shape {a.shape} does not match RevIN state for B={state.batch}, C={state.channels}"
        )


def revin_normalize(x, state: RevinState) -> np.ndarray:
    x = _check_tensor(x, "input")
    _check_state(x, state, "input")
    return state.gamma * (x - state.mu[:, None, :]) / state.sigma[:, None, :] + state.beta


def revin_denormalize(o, state: RevinState) -> np.ndarray:
    o = _check_tensor(o, "model output")
    _check_state(o, state, "model output")
    _check_gamma(state.gamma)
    return (o - state.beta) / state.gamma * state.sigma[:, None, :] + state.mu[:, None, :]


def revin_forward(x, gamma=None, beta=None, eps: float = DEFAULT_EPS) -> tuple[np.ndarray, RevinCache]:
    """Normalize ``x`` and return the cache needed by :func:`revin_backward`."""
    x = _check_tensor(x, "input")
    c = x.shape[2]
    gamma = np.ones(c) if gamma is None else gamma
    beta = np.zeros(c) if beta is None else beta
    xt, cache = revin_forward_cm(_to_cm(x), gamma, beta, eps)
    return _from_cm(xt), cache


def revin_denormalize_cached(o, cache: RevinCache) -> np.ndarray:
    o = _check_tensor(o, "model output")
    _check_state(o, cache.state, "model output")
    return _from_cm(denormalize_cm(_to_cm(o), cache))


def revin_backward(grad_out, cache: RevinCache,
                   model_vjp: Callable[[np.ndarray], np.ndarray] | None = None):
    """Gradients of ``denormalize(model(normalize(x)))`` w.r.t. x, gamma and beta.

    ``cache`` comes from :func:`revin_forward` followed by
    :func:`revin_denormalize_cached`.  ``model_vjp`` maps a ``(B, T, C)``
    gradient at the model output to a ``(B, L, C)`` gradient at its input;
    ``None`` means the identity model (requires T == L).
    """
    if not isinstance(cache, RevinCache):
        raise StateError("revin_backward needs the RevinCache from a matching forward call")
    grad_out = _check_tensor(grad_out, "gradient")
    grad_o, gg_out, gb_out, g_mu, g_sigma = denormalize_backward_cm(_to_cm(grad_out), cache)
    if model_vjp is None:
        g_xt = grad_o
    else:
        g_xt = _to_cm(np.asarray(model_vjp(_from_cm(grad_o)), dtype=np.float64))
    grad_x, gg_in, gb_in = normalize_backward_cm(g_xt, cache, g_mu, g_sigma)
    return _from_cm(grad_x), gg_out + gg_in, gb_out + gb_in
