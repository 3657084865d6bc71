"""Central finite-difference check of analytic gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import NonFiniteError, ShapeError, Tensor


def numerical_gradient(f: Callable[[Tensor], Tensor], point, step: float = 1e-5) -> np.ndarray:
    x = np.array(point, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = _scalar(f(Tensor(x)))
        flat[i] = orig - step
        lo = _scalar(f(Tensor(x)))
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def _scalar(out) -> float:
    if not isinstance(out, Tensor) or out.size != 1:
        raise ShapeError("grad_check: function must return a single-element Tensor")
    val = out.item()
    if not np.isfinite(val):
        raise NonFiniteError("grad_check: non-finite function value")
    return val


def grad_check(f: Callable[[Tensor], Tensor], point, step: float = 1e-5) -> float:
    """Compare backprop against central differences.

    Args:
        f: maps a Tensor to a scalar Tensor built from differentiable ops.
        point: where to evaluate.
        step: finite-difference step, must be positive.

    Returns:
        max over coordinates of |analytic - numeric| / max(1, |analytic|).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = Tensor(point, requires_grad=True)
    out = f(x)
    _scalar(out)
    out.backward()
    analytic = x.grad if x.grad is not None else np.zeros(x.shape)
    numeric = numerical_gradient(f, point, step)
    rel = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(rel.max()) if rel.size else 0.0
