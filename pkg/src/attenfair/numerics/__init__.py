"""Minimal reverse-mode autodiff on float64 numpy arrays."""

from . import ops
from .gradcheck import grad_check, numerical_gradient
from .ops import (
    add,
    clip_min,
    concat,
    conv2d,
    div,
    elementwise,
    exp,
    log,
    log_softmax,
    masked_logsumexp,
    matmul,
    mul,
    neg,
    pairwise_sqdist,
    pool2d,
    reduce,
    relu,
    reshape,
    scale,
    sigmoid,
    sub,
    take,
)
from .tensor import NonFiniteError, ShapeError, Tensor, as_tensor

__all__ = [
    "Tensor",
    "NonFiniteError",
    "ShapeError",
    "as_tensor",
    "ops",
    "grad_check",
    "numerical_gradient",
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
]
