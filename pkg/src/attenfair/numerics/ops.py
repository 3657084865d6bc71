"""Differentiable operations on :class:`~attenfair.numerics.tensor.Tensor`.

Every function returns a fresh node; nothing is mutated in place. Binary
elementwise ops broadcast like numpy, and their gradients are summed back
to the operand's own dims.
"""

from __future__ import annotations

from typing import Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import NonFiniteError, ShapeError, Tensor, as_tensor

Axes = Union[None, int, Sequence[int]]

UNARY_OPS = ("neg", "exp", "log", "relu", "sigmoid")
BINARY_OPS = ("add", "sub", "mul", "div")


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if keep:
        grad = grad.sum(axis=keep, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: dims {a.dims} and {b.dims} do not broadcast") from None


# -- elementwise ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return Tensor._from_op(
        a.data + b.data,
        [(a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: _unbroadcast(g, b.shape))],
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return Tensor._from_op(
        a.data - b.data,
        [(a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: -_unbroadcast(g, b.shape))],
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return Tensor._from_op(
        a.data * b.data,
        [
            (a, lambda g: _unbroadcast(g * b.data, a.shape)),
            (b, lambda g: _unbroadcast(g * a.data, b.shape)),
        ],
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    if np.any(b.data == 0):
        raise ZeroDivisionError("div: divisor contains zero")
    out = a.data / b.data
    return Tensor._from_op(
        out,
        [
            (a, lambda g: _unbroadcast(g / b.data, a.shape)),
            (b, lambda g: _unbroadcast(-g * out / b.data, b.shape)),
        ],
        "div",
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._from_op(-a.data, [(a, lambda g: -g)], "neg")


def scale(a, c: float) -> Tensor:
    """Multiply by a plain constant."""
    a = as_tensor(a)
    c = float(c)
    return Tensor._from_op(a.data * c, [(a, lambda g: g * c)], "scale")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return Tensor._from_op(out, [(a, lambda g: g * out)], "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise ValueError("log: argument must be strictly positive")
    return Tensor._from_op(np.log(a.data), [(a, lambda g: g / a.data)], "log")


def relu(a) -> Tensor:
    a = as_tensor(a)
    on = a.data > 0
    return Tensor._from_op(np.where(on, a.data, 0.0), [(a, lambda g: g * on)], "relu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    z = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return Tensor._from_op(out, [(a, lambda g: g * out * (1.0 - out))], "sigmoid")


def clip_min(a, floor: float) -> Tensor:
    """``max(a, floor)`` with zero gradient where the floor is active."""
    a = as_tensor(a)
    live = a.data >= floor
    return Tensor._from_op(np.where(live, a.data, floor), [(a, lambda g: g * live)], "clip_min")


def elementwise(tag: str, a, b=None) -> Tensor:
    """Dispatch an elementwise op by name.

    For ``scale-by-constant`` the second argument is the plain float factor.
    """
    if tag in BINARY_OPS:
        if b is None:
            raise ValueError(f"{tag} needs two operands")
        return globals()[tag](a, b)
    if tag in UNARY_OPS:
        return globals()[tag](a)
    if tag in ("scale", "scale-by-constant"):
        return scale(a, b)
    raise ValueError(f"unknown elementwise op {tag!r}")


# -- linear algebra ------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.dims} and {b.dims}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ ({a.dims} x {b.dims})")
    return Tensor._from_op(
        a.data @ b.data,
        [(a, lambda g: g @ b.data.T), (b, lambda g: a.data.T @ g)],
        "matmul",
    )


# -- shape manipulation --------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.dims} to {list(shape)}") from None
    return Tensor._from_op(out, [(a, lambda g: g.reshape(a.shape))], "reshape")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def rule(i):
        return lambda g: np.split(g, bounds, axis=axis)[i]

    return Tensor._from_op(out, [(t, rule(i)) for i, t in enumerate(ts)], "concat")


def take(a, indices, axis: int = 0) -> Tensor:
    """Select slices along ``axis``; repeated indices accumulate gradient."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    out = np.take(a.data, idx, axis=axis)

    def rule(g):
        full = np.zeros(a.shape)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return full

    return Tensor._from_op(out, [(a, rule)], "take")


# -- reductions ----------------------------------------------------------


def _norm_axes(axes: Axes, ndim: int) -> tuple:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, (int, np.integer)):
        axes = (int(axes),)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    if len(set(out)) != len(out):
        raise ShapeError("repeated reduction axis")
    return tuple(sorted(out))


def reduce(a, axes: Axes = None, mode: str = "sum", keepdims: bool = False) -> Tensor:
    """Sum, mean or max over ``axes`` (all axes when None).

    The max backward routes the gradient to the first maximal element in
    row-major order over the reduced axes.
    """
    a = as_tensor(a)
    axes = _norm_axes(axes, a.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    if n == 0 or a.size == 0:
        raise ShapeError("empty reduction")
    kept_shape = tuple(1 if i in axes else d for i, d in enumerate(a.shape))

    if mode == "sum":
        out = a.data.sum(axis=axes, keepdims=keepdims)
        rule = lambda g: np.broadcast_to(g.reshape(kept_shape), a.shape).copy()
    elif mode == "mean":
        out = a.data.mean(axis=axes, keepdims=keepdims)
        rule = lambda g: np.broadcast_to(g.reshape(kept_shape) / n, a.shape).copy()
    elif mode == "max":
        rest = tuple(i for i in range(a.ndim) if i not in axes)
        moved = np.transpose(a.data, rest + axes)
        flat = moved.reshape(moved.shape[: len(rest)] + (n,))
        arg = np.argmax(flat, axis=-1)
        vals = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        out = vals.reshape(kept_shape) if keepdims else vals

        def rule(g):
            gflat = np.zeros(flat.shape)
            np.put_along_axis(gflat, arg[..., None], g.reshape(arg.shape)[..., None], axis=-1)
            gmoved = gflat.reshape(moved.shape)
            return np.transpose(gmoved, np.argsort(rest + axes))

    else:
        raise ValueError(f"unknown reduce mode {mode!r}")
    return Tensor._from_op(np.asarray(out), [(a, rule)], f"reduce_{mode}")


def masked_logsumexp(a, mask, axis: int = -1, floor: Optional[float] = None) -> Tensor:
    """log(sum(exp(a) over entries where mask is true)) along ``axis``.

    Slices with no selected entry (or a result below ``floor``) take the
    value ``floor`` and pass no gradient. Without a floor such slices raise
    :class:`NonFiniteError`.
    """
    a = as_tensor(a)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    masked = np.where(mask, a.data, -np.inf)
    peak = masked.max(axis=axis, keepdims=True)
    safe_peak = np.where(np.isfinite(peak), peak, 0.0)
    w = np.where(mask, np.exp(masked - safe_peak), 0.0)
    total = w.sum(axis=axis, keepdims=True)
    with np.errstate(divide="ignore"):
        lse = np.log(total) + safe_peak
    if floor is None:
        if not np.isfinite(lse).all():
            raise NonFiniteError("masked_logsumexp: empty selection")
        live = np.ones_like(lse, dtype=bool)
        out = lse
    else:
        live = lse > floor
        out = np.where(live, lse, floor)
    soft = np.where(live, w / np.where(total > 0, total, 1.0), 0.0)
    return Tensor._from_op(
        np.squeeze(out, axis=axis),
        [(a, lambda g: np.expand_dims(g, axis) * soft)],
        "masked_logsumexp",
    )


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    probs = np.exp(out)
    return Tensor._from_op(
        out,
        [(a, lambda g: g - probs * g.sum(axis=axis, keepdims=True))],
        "log_softmax",
    )


def pairwise_sqdist(x) -> Tensor:
    """Squared euclidean distances between the rows of a [b, d] tensor.

    The diagonal is exactly zero.
    """
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"pairwise_sqdist expects [b, d], got {x.dims}")
    sq = np.einsum("ij,ij->i", x.data, x.data)
    out = sq[:, None] + sq[None, :] - 2.0 * (x.data @ x.data.T)
    np.maximum(out, 0.0, out=out)
    np.fill_diagonal(out, 0.0)

    def rule(g):
        sym = g + g.T
        return 2.0 * (sym.sum(axis=1)[:, None] * x.data - sym @ x.data)

    return Tensor._from_op(out, [(x, rule)], "pairwise_sqdist")


# -- convolution and pooling ---------------------------------------------


def conv2d(x, kernel, padding: int = 0) -> Tensor:
    """Stride-1 cross-correlation.

    Args:
        x: input of dims [C_in, H, W] or batched [N, C_in, H, W].
        kernel: weights of dims [C_out, C_in, kh, kw].
        padding: zero padding added on every side.

    Returns:
        Tensor of dims [C_out, H', W'] (or [N, C_out, H', W']) where
        H' = H + 2*padding - kh + 1.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    unbatched = x.ndim == 3
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects [C,H,W] or [N,C,H,W] input and 4-d kernel, got {x.dims}, {kernel.dims}")
    n, c, h, w = xd.shape
    co, ci, kh, kw = kernel.shape
    if ci != c:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {ci}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError("conv2d: kernel sides must be odd")
    p = int(padding)
    if p < 0:
        raise ValueError("padding must be non-negative")
    ho, wo = h + 2 * p - kh + 1, w + 2 * p - kw + 1
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d: kernel larger than padded input")

    xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p))) if p else xd
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # [n, c, ho, wo, kh, kw]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)
    kmat = kernel.data.reshape(co, c * kh * kw)
    out = (cols @ kmat.T).reshape(n, ho, wo, co).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out[0] if unbatched else out)

    def _gflat(g):
        gb = g[None] if unbatched else g
        return gb.transpose(0, 2, 3, 1).reshape(n * ho * wo, co)

    def grad_x(g):
        dcols = (_gflat(g) @ kmat).reshape(n, ho, wo, c, kh, kw)
        dcols = np.ascontiguousarray(dcols.transpose(0, 3, 4, 5, 1, 2))
        gx = np.zeros((n, c, h + 2 * p, w + 2 * p))
        for u in range(kh):
            for v in range(kw):
                gx[:, :, u : u + ho, v : v + wo] += dcols[:, :, u, v]
        if p:
            gx = gx[:, :, p:-p, p:-p]
        gx = np.ascontiguousarray(gx)
        return gx[0] if unbatched else gx

    def grad_k(g):
        return (_gflat(g).T @ cols).reshape(kernel.shape)

    return Tensor._from_op(out, [(x, grad_x), (kernel, grad_k)], "conv2d")


def pool2d(x, window: int, mode: str = "max") -> Tensor:
    """Non-overlapping pooling over the last two axes.

    ``window`` must divide both spatial sides. Max pooling sends the
    gradient to the first maximal element of each window in row-major order.
    """
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeError("pool2d needs at least two axes")
    k = int(window)
    h, w = x.shape[-2:]
    if k < 1 or h % k or w % k:
        raise ShapeError(f"pool2d: window {window} does not divide spatial dims {h}x{w}")
    lead = x.shape[:-2]
    blocks = x.data.reshape(lead + (h // k, k, w // k, k))
    nl = len(lead)
    order = tuple(range(nl)) + (nl, nl + 2, nl + 1, nl + 3)
    tiles = blocks.transpose(order).reshape(lead + (h // k, w // k, k * k))

    if mode == "avg":
        out = tiles.mean(axis=-1)

        def rule(g):
            return np.repeat(np.repeat(g / (k * k), k, axis=-2), k, axis=-1)

    elif mode == "max":
        arg = tiles.argmax(axis=-1)
        out = np.take_along_axis(tiles, arg[..., None], axis=-1)[..., 0]

        def rule(g):
            gt = np.zeros(tiles.shape)
            np.put_along_axis(gt, arg[..., None], g[..., None], axis=-1)
            gt = gt.reshape(lead + (h // k, w // k, k, k))
            back = tuple(range(nl)) + (nl, nl + 2, nl + 1, nl + 3)
            return gt.transpose(back).reshape(x.shape)

    else:
        raise ValueError(f"unknown pool mode {mode!r}")
    return Tensor._from_op(out, [(x, rule)], f"pool2d_{mode}")


__all__ = [
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "scale",
    "exp",
    "log",
    "relu",
    "sigmoid",
    "clip_min",
    "elementwise",
    "matmul",
    "reshape",
    "concat",
    "take",
    "reduce",
    "masked_logsumexp",
    "log_softmax",
    "pairwise_sqdist",
    "conv2d",
    "pool2d",
    "NonFiniteError",
]
