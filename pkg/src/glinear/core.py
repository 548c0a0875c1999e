"""Dense float64 numeric kernel.

Matrices are 2-D ``float64`` numpy arrays and batched windows are 3-D arrays
laid out ``(batch, steps, channels)``.  Everything here is a pure function.

The exact GELU uses ``scipy.special.erf`` (a compiled Cephes routine accurate
to a few ulp), so no rational approximation of erf is needed.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy.special import erf

from .errors import EvaluationError, ShapeError

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
INV_SQRT_2 = 1.0 / math.sqrt(2.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
TANH_CUBIC = 0.044715

GELU_FORMS = ("exact", "tanh")


def as_matrix(values, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Coerce ``values`` to a finite 2-D float64 array, optionally checking its shape."""
    a = np.asarray(values, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a matrix, got array with shape {a.shape}")
    if rows is not None and a.shape[0] != rows or cols is not None and a.shape[1] != cols:
        raise ShapeError(f"expected a {rows}x{cols} matrix, got {a.shape[0]}x{a.shape[1]}")
    check_finite(a, "matrix")
    return a


def as_tensor3(values) -> np.ndarray:
    a = np.asarray(values, dtype=np.float64)
    if a.ndim != 3:
        raise ShapeError(f"expected a (batch, steps, channels) tensor, got shape {a.shape}")
    check_finite(a, "tensor")
    return a


def check_finite(a: np.ndarray, what: str = "array") -> None:
    if not np.all(np.isfinite(a)):
        bad = int(np.size(a) - np.count_nonzero(np.isfinite(a)))
        raise FloatingPointError(f"{what} contains {bad} non-finite entries")


def matmul(a, b) -> np.ndarray:
    """Matrix product of an m x k and a k x n matrix."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs two matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}"
        )
    with np.errstate(over="ignore", invalid="ignore"):
        out = a @ b
    check_finite(out, "matmul result")
    return out


def std_normal_cdf(x):
    return 0.5 * (1.0 + erf(np.asarray(x, dtype=np.float64) * INV_SQRT_2))


def std_normal_pdf(x):
    x = np.asarray(x, dtype=np.float64)
    return INV_SQRT_2PI * np.exp(-0.5 * x * x)


def gelu_exact(x):
    """GELU(x) = x * Phi(x) with Phi the standard-normal CDF."""
    x = np.asarray(x, dtype=np.float64)
    out = x * std_normal_cdf(x)
    return out if out.ndim else float(out)


def gelu_tanh(x):
    """Tanh approximation 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    x = np.asarray(x, dtype=np.float64)
    out = 0.5 * x * (1.0 + np.tanh(SQRT_2_OVER_PI * (x + TANH_CUBIC * (x * x * x))))
    return out if out.ndim else float(out)


def gelu_grad(x, form: str = "tanh"):
    """Derivative of :func:`gelu_exact` or :func:`gelu_tanh`."""
    x = np.asarray(x, dtype=np.float64)
    if form == "exact":
        out = std_normal_cdf(x) + x * std_normal_pdf(x)
    elif form == "tanh":
        th = np.tanh(SQRT_2_OVER_PI * (x + TANH_CUBIC * (x * x * x)))
        du = SQRT_2_OVER_PI * (1.0 + 3.0 * TANH_CUBIC * x * x)
        out = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
    else:
        raise ValueError(f"unknown GELU form {form!r}; expected one of {GELU_FORMS}")
    return out if out.ndim else float(out)


def gelu(x, form: str = "tanh"):
    if form == "exact":
        return gelu_exact(x)
    if form == "tanh":
        return gelu_tanh(x)
    raise ValueError(f"unknown GELU form {form!r}; expected one of {GELU_FORMS}")


def finite_diff_grad(f: Callable[[np.ndarray], float], theta, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a parameter vector.

    ``theta`` is copied; ``f`` always receives a fresh perturbed vector.
    """
    if not h > 0:
        raise ValueError(f"step must be positive, got {h}")
    theta = np.array(theta, dtype=np.float64).ravel()
    grad = np.empty_like(theta)
    for i in range(theta.size):
        up = theta.copy()
        up[i] += h
        down = theta.copy()
        down[i] -= h
        f_up = float(f(up))
        f_down = float(f(down))
        if not (math.isfinite(f_up) and math.isfinite(f_down)):
            raise EvaluationError(f"non-finite evaluation while differentiating coordinate {i}")
        grad[i] = (f_up - f_down) / (2.0 * h)
    return grad
