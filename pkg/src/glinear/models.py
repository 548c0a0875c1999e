"""Linear, NLinear, DLinear, RLinear and GLinear predictors.

All models map each channel's lookback window (length ``L``) to its forecast
(length ``T``) independently.  Inputs and outputs are ``(B, steps, C)``
arrays.  Internally the channel axis is moved to the front so that a shared
layer is one ``(C*B, L) @ (L, T)`` product and a per-channel layer is a
stacked ``(C, B, L) @ (C, L, T)`` product.

Parameter layout (``individual`` adds a leading channel axis to every weight
and bias):

=========  ==========================================================
linear     ``w (T, L)``, ``b (T,)``
nlinear    same as linear
dlinear    ``w_trend``, ``b_trend``, ``w_seasonal``, ``b_seasonal``
rlinear    ``w``, ``b``, ``gamma (C,)``, ``beta (C,)``
glinear    ``w1 (H, L)``, ``b1 (H,)``, ``w2 (T, H)``, ``b2 (T,)``,
           ``gamma (C,)``, ``beta (C,)``
=========  ==========================================================
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import core
from .errors import ConfigError, ShapeError, StateError
from .normalization import (
    DEFAULT_EPS,
    denormalize_backward_cm,
    denormalize_cm,
    normalize_backward_cm,
    revin_forward_cm,
)

VARIANTS = ("linear", "nlinear", "dlinear", "rlinear", "glinear")
REVIN_VARIANTS = ("rlinear", "glinear")
DEFAULT_MA_KERNEL = 25


@dataclass(frozen=True)
class PredictorConfig:
    variant: str
    seq_len: int
    pred_len: int
    channels: int = 1
    individual: bool | None = None  # None: per-channel for glinear, shared otherwise
    ma_kernel: int = DEFAULT_MA_KERNEL
    hidden: int | None = None  # glinear width, defaults to seq_len
    activation: str = "tanh"
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        variant = str(self.variant).lower()
        if variant not in VARIANTS:
            raise ConfigError(f"unknown model variant {self.variant!r}; expected one of {VARIANTS}")
        object.__setattr__(self, "variant", variant)
        for name in ("seq_len", "pred_len", "channels"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.individual is None:
            object.__setattr__(self, "individual", variant == "glinear")
        if self.hidden is None:
            object.__setattr__(self, "hidden", self.seq_len)
        if self.hidden < 1:
            raise ConfigError(f"hidden width must be >= 1, got {self.hidden}")
        if self.ma_kernel < 1 or self.ma_kernel % 2 == 0:
            raise ConfigError(f"moving-average kernel must be odd and >= 1, got {self.ma_kernel}")
        if variant == "dlinear" and self.ma_kernel > 2 * self.seq_len - 1:
            raise ConfigError(
                f"moving-average kernel {self.ma_kernel} exceeds 2*seq_len-1 = {2 * self.seq_len - 1}"
            )
        if self.activation not in core.GELU_FORMS:
            raise ConfigError(f"activation must be one of {core.GELU_FORMS}, got {self.activation!r}")

    @property
    def uses_revin(self) -> bool:
        return self.variant in REVIN_VARIANTS

    def to_dict(self) -> dict:
        return asdict(self)


class ParamSet(dict):
    """Name -> float64 array mapping with a version counter bumped on every update."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.version = 0

    def copy(self) -> "ParamSet":
        out = ParamSet({k: v.copy() for k, v in self.items()})
        out.version = self.version
        return out

    def size(self) -> int:
        return int(sum(v.size for v in self.values()))


@dataclass
class ForwardCache:
    variant: str
    version: int
    params_id: int
    batch_shape: tuple
    values: dict = field(default_factory=dict)


@dataclass
class Model:
    config: PredictorConfig
    params: ParamSet

    def predict(self, x) -> np.ndarray:
        return forward(self.config, self.params, x)[0]


# ---------------------------------------------------------------- parameters


def _layer_shapes(cfg: PredictorConfig) -> dict[str, tuple[tuple, int]]:
    """Weight/bias shapes (without channel axis) and the fan-in used for init."""
    L, T, H = cfg.seq_len, cfg.pred_len, cfg.hidden
    if cfg.variant in ("linear", "nlinear", "rlinear"):
        return {"w": ((T, L), L), "b": ((T,), L)}
    if cfg.variant == "dlinear":
        return {
            "w_trend": ((T, L), L),
            "b_trend": ((T,), L),
            "w_seasonal": ((T, L), L),
            "b_seasonal": ((T,), L),
        }
    return {"w1": ((H, L), L), "b1": ((H,), L), "w2": ((T, H), H), "b2": ((T,), H)}


def init_params(cfg: PredictorConfig, rng=None) -> ParamSet:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights; RevIN affine at identity."""
    rng = np.random.default_rng(rng)
    params = ParamSet()
    lead = (cfg.channels,) if cfg.individual else ()
    for name, (shape, fan_in) in _layer_shapes(cfg).items():
        bound = 1.0 / np.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=lead + shape)
    if cfg.uses_revin:
        params["gamma"] = np.ones(cfg.channels)
        params["beta"] = np.zeros(cfg.channels)
    return params


def param_count(cfg: PredictorConfig, include_affine: bool = True) -> int:
    L, T, H, C = cfg.seq_len, cfg.pred_len, cfg.hidden, cfg.channels
    copies = C if cfg.individual else 1
    if cfg.variant in ("linear", "nlinear", "rlinear"):
        per = T * L + T
    elif cfg.variant == "dlinear":
        per = 2 * (T * L + T)
    else:
        per = L * H + H + T * H + T
    affine = 2 * C if cfg.uses_revin and include_affine else 0
    return copies * per + affine


def check_params(cfg: PredictorConfig, params) -> None:
    lead = (cfg.channels,) if cfg.individual else ()
    expected = {name: lead + shape for name, (shape, _) in _layer_shapes(cfg).items()}
    if cfg.uses_revin:
        expected["gamma"] = (cfg.channels,)
        expected["beta"] = (cfg.channels,)
    if set(params) != set(expected):
        raise ShapeError(f"{cfg.variant} expects parameters {sorted(expected)}, got {sorted(params)}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ShapeError(f"parameter {name!r} has shape {params[name].shape}, expected {shape}")


# ---------------------------------------------------------------- kernels


def _to_channels(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x.transpose(2, 0, 1))


def _from_channels(y: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(y.transpose(1, 2, 0))


def _dense(xc: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Apply ``w @ x + b`` to every (channel, instance) row of ``xc`` (C, B, in)."""
    if w.ndim == 2:
        # one 2-D product; a broadcast 3-D @ 2-D matmul loops over channels
        out = xc.reshape(-1, xc.shape[-1]) @ w.T
        out += b
        return out.reshape(xc.shape[:-1] + (w.shape[0],))
    out = np.matmul(xc, w.transpose(0, 2, 1))
    out += b[:, None, :]
    return out


def _dense_backward(xc, w, g, need_x: bool = True):
    if w.ndim == 2:
        g2 = g.reshape(-1, g.shape[-1])
        gw = g2.T @ xc.reshape(-1, xc.shape[-1])
        gb = g2.sum(axis=0)
        gx = (g2 @ w).reshape(g.shape[:-1] + (w.shape[1],)) if need_x else None
    else:
        gw = np.matmul(g.transpose(0, 2, 1), xc)
        gb = g.sum(axis=1)
        gx = np.matmul(g, w) if need_x else None
    return gx, gw, gb


def _check_input(x, seq_len=None, channels=None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"expected (B, L, C) input, got shape {x.shape}")
    if seq_len is not None and x.shape[1] != seq_len:
        raise ShapeError(f"input has L={x.shape[1]}, model expects L={seq_len}")
    if channels is not None and x.shape[2] != channels:
        raise ShapeError(f"input has C={x.shape[2]}, model expects C={channels}")
    return x


def _check_layer(x: np.ndarray, w: np.ndarray, what: str = "w") -> None:
    if w.shape[-1] != x.shape[1]:
        raise ShapeError(f"{what} expects L={w.shape[-1]}, input has L={x.shape[1]}")
    if w.ndim == 3 and w.shape[0] != x.shape[2]:
        raise ShapeError(f"per-channel {what} has {w.shape[0]} channels, input has {x.shape[2]}")


@lru_cache(maxsize=64)
def moving_average_matrix(length: int, kernel: int) -> np.ndarray:
    """(length, length) operator of a centered moving average with edge replication."""
    if kernel < 1 or kernel % 2 == 0:
        raise ConfigError(f"moving-average kernel must be odd and >= 1, got {kernel}")
    half = (kernel - 1) // 2
    a = np.zeros((length, length))
    for t in range(length):
        for s in range(t - half, t + half + 1):
            a[t, min(max(s, 0), length - 1)] += 1.0
    a /= kernel
    a.setflags(write=False)
    return a


def decompose_moving_average(x, kernel: int = DEFAULT_MA_KERNEL) -> tuple[np.ndarray, np.ndarray]:
    """Split ``x`` into a moving-average trend and the seasonal remainder ``x - trend``."""
    x = _check_input(x)
    length = x.shape[1]
    if kernel < 1 or kernel % 2 == 0:
        raise ConfigError(f"moving-average kernel must be odd and >= 1, got {kernel}")
    if kernel > 2 * length - 1:
        raise ConfigError(f"moving-average kernel {kernel} exceeds 2*L-1 = {2 * length - 1}")
    if kernel == 1:
        return x.copy(), np.zeros_like(x)
    trend = np.matmul(moving_average_matrix(length, kernel), x)
    return trend, x - trend


# ---------------------------------------------------------------- forwards


def _fwd_linear(x, p):
    _check_layer(x, p["w"])
    xc = _to_channels(x)
    return _from_channels(_dense(xc, p["w"], p["b"])), {"xc": xc}


def _fwd_nlinear(x, p):
    _check_layer(x, p["w"])
    last = x[:, -1:, :]
    uc = _to_channels(x - last)
    return _from_channels(_dense(uc, p["w"], p["b"])) + last, {"xc": uc}


def _fwd_dlinear(x, p, kernel):
    _check_layer(x, p["w_trend"], "w_trend")
    _check_layer(x, p["w_seasonal"], "w_seasonal")
    trend, seasonal = decompose_moving_average(x, kernel)
    tc, sc = _to_channels(trend), _to_channels(seasonal)
    y = _dense(tc, p["w_trend"], p["b_trend"]) + _dense(sc, p["w_seasonal"], p["b_seasonal"])
    return _from_channels(y), {"tc": tc, "sc": sc, "kernel": kernel}


def _fwd_rlinear(x, p, eps):
    _check_layer(x, p["w"])
    xc, rc = revin_forward_cm(_to_channels(x), p["gamma"], p["beta"], eps)
    o = _dense(xc, p["w"], p["b"])
    return _from_channels(denormalize_cm(o, rc)), {"xc": xc, "revin": rc}


def _fwd_glinear(x, p, activation, eps):
    _check_layer(x, p["w1"], "w1")
    xc, rc = revin_forward_cm(_to_channels(x), p["gamma"], p["beta"], eps)
    pre = _dense(xc, p["w1"], p["b1"])
    h = core.gelu(pre, activation)
    o = _dense(h, p["w2"], p["b2"])
    return _from_channels(denormalize_cm(o, rc)), {"xc": xc, "pre": pre, "h": h, "revin": rc}


def forward_linear(x, p) -> np.ndarray:
    """Per-channel ``W x + b``."""
    return _fwd_linear(_check_input(x), p)[0]


def forward_nlinear(x, p) -> np.ndarray:
    """Linear map of the window minus its last value, with the last value added back."""
    return _fwd_nlinear(_check_input(x), p)[0]


def forward_dlinear(x, p, kernel: int = DEFAULT_MA_KERNEL) -> np.ndarray:
    return _fwd_dlinear(_check_input(x), p, kernel)[0]


def forward_rlinear(x, p, eps: float = DEFAULT_EPS) -> np.ndarray:
    return _fwd_rlinear(_check_input(x), p, eps)[0]


def forward_glinear(x, p, activation: str = "tanh", eps: float = DEFAULT_EPS,
                    cache_out: dict | None = None) -> np.ndarray:
    """RevIN-wrapped per-channel ``W2 GELU(W1 x + b1) + b2``.

    If ``cache_out`` is a dict it receives the forward intermediates.
    """
    y, values = _fwd_glinear(_check_input(x), p, activation, eps)
    if cache_out is not None:
        cache_out.update(values)
    return y


def forward(cfg: PredictorConfig, params: ParamSet, x) -> tuple[np.ndarray, ForwardCache]:
    x = _check_input(x, cfg.seq_len, cfg.channels)
    v = cfg.variant
    if v == "linear":
        y, values = _fwd_linear(x, params)
    elif v == "nlinear":
        y, values = _fwd_nlinear(x, params)
    elif v == "dlinear":
        y, values = _fwd_dlinear(x, params, cfg.ma_kernel)
    elif v == "rlinear":
        y, values = _fwd_rlinear(x, params, cfg.eps)
    else:
        y, values = _fwd_glinear(x, params, cfg.activation, cfg.eps)
    cache = ForwardCache(
        variant=v,
        version=getattr(params, "version", 0),
        params_id=id(params),
        batch_shape=x.shape,
        values=values,
    )
    return y, cache


# ---------------------------------------------------------------- backward


def backward(cfg: PredictorConfig, params: ParamSet, cache: ForwardCache, grad_out,
             need_input: bool = False) -> tuple[dict, np.ndarray | None]:
    """Parameter gradients (and optionally the input gradient) for ``grad_out`` at the output."""
    if not isinstance(cache, ForwardCache) or cache.variant != cfg.variant:
        raise StateError(f"cache does not come from a {cfg.variant} forward pass")
    if cache.params_id != id(params) or cache.version != getattr(params, "version", 0):
        raise StateError("stale forward cache: parameters changed since the forward pass")
    grad_out = np.asarray(grad_out, dtype=np.float64)
    B, L, C = cache.batch_shape
    if grad_out.shape != (B, cfg.pred_len, C):
        raise ShapeError(f"grad_out has shape {grad_out.shape}, expected {(B, cfg.pred_len, C)}")
    vals = cache.values
    grads: dict[str, np.ndarray] = {}
    grad_in = None

    if cfg.variant in ("linear", "nlinear"):
        gc = _to_channels(grad_out)
        gx, grads["w"], grads["b"] = _dense_backward(vals["xc"], params["w"], gc, need_input)
        if need_input:
            grad_in = _from_channels(gx)
            if cfg.variant == "nlinear":
                grad_in[:, -1, :] += grad_out.sum(axis=1) - grad_in.sum(axis=1)

    elif cfg.variant == "dlinear":
        gc = _to_channels(grad_out)
        gt, grads["w_trend"], grads["b_trend"] = _dense_backward(vals["tc"], params["w_trend"], gc, need_input)
        gs, grads["w_seasonal"], grads["b_seasonal"] = _dense_backward(
            vals["sc"], params["w_seasonal"], gc, need_input
        )
        if need_input:
            gt, gs = _from_channels(gt), _from_channels(gs)
            if vals["kernel"] == 1:
                grad_in = gt
            else:
                a = moving_average_matrix(L, vals["kernel"])
                grad_in = gs + np.matmul(a.T, gt - gs)

    else:
        rc = vals["revin"]
        gc, g_gamma, g_beta, g_mu, g_sigma = denormalize_backward_cm(_to_channels(grad_out), rc)
        if cfg.variant == "rlinear":
            gxc, grads["w"], grads["b"] = _dense_backward(vals["xc"], params["w"], gc)
        else:
            gh, grads["w2"], grads["b2"] = _dense_backward(vals["h"], params["w2"], gc)
            gpre = gh * core.gelu_grad(vals["pre"], cfg.activation)
            gxc, grads["w1"], grads["b1"] = _dense_backward(vals["xc"], params["w1"], gpre)
        gx, gg, gb = normalize_backward_cm(gxc, rc, g_mu, g_sigma, need_input)
        if need_input:
            grad_in = _from_channels(gx)
        grads["gamma"] = g_gamma + gg
        grads["beta"] = g_beta + gb

    return grads, grad_in


# ---------------------------------------------------------------- checkpoints


def checkpoint_arrays(cfg: PredictorConfig, params: ParamSet) -> dict[str, np.ndarray]:
    """Flatten parameters to checkpoint keys such as ``glinear.c3.w1`` or ``revin.gamma``."""
    out = {}
    for name, arr in params.items():
        if name in ("gamma", "beta"):
            out[f"revin.{name}"] = arr
        elif cfg.individual:
            for c in range(cfg.channels):
                out[f"{cfg.variant}.c{c}.{name}"] = arr[c]
        else:
            out[f"{cfg.variant}.{name}"] = arr
    return {k: np.ascontiguousarray(v, dtype="<f8") for k, v in out.items()}


def save_checkpoint(path, cfg: PredictorConfig, params: ParamSet) -> Path:
    """Write a ``.npz`` map of little-endian float64 arrays plus the config as JSON."""
    path = Path(path)
    check_params(cfg, params)
    arrays = checkpoint_arrays(cfg, params)
    arrays["__config__"] = np.array(json.dumps(cfg.to_dict()))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> Model:
    with np.load(Path(path), allow_pickle=False) as data:
        cfg = PredictorConfig(**json.loads(str(data["__config__"])))
        flat = {k: np.asarray(data[k], dtype=np.float64) for k in data.files if k != "__config__"}
    params = ParamSet()
    for name in _layer_shapes(cfg):
        if cfg.individual:
            params[name] = np.stack([flat[f"{cfg.variant}.c{c}.{name}"] for c in range(cfg.channels)])
        else:
            params[name] = flat[f"{cfg.variant}.{name}"]
    if cfg.uses_revin:
        params["gamma"] = flat["revin.gamma"]
        params["beta"] = flat["revin.beta"]
    check_params(cfg, params)
    return Model(cfg, params)
