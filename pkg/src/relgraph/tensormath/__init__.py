"""Numpy-backed tensors with reverse-mode differentiation."""

from . import ops
from .gradcheck import EvaluationError, grad_check
from .ops import (
    add,
    batch_norm,
    clamp_min,
    concat,
    conv2d,
    div,
    exp,
    gem_pool,
    index,
    l2_normalize,
    linear,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    power,
    relu,
    reshape,
    softmax_cross_entropy,
    sqrt,
    stack,
    sub,
    tanh,
    transpose,
)
from .tensor import DimensionError, ParameterError, Tape, Tensor, as_tensor

__all__ = [
    "DimensionError",
    "EvaluationError",
    "ParameterError",
    "Tape",
    "Tensor",
    "add",
    "as_tensor",
    "batch_norm",
    "clamp_min",
    "concat",
    "conv2d",
    "div",
    "exp",
    "gem_pool",
    "grad_check",
    "index",
    "l2_normalize",
    "linear",
    "log",
    "log_softmax",
    "matmul",
    "mean",
    "mul",
    "ops",
    "power",
    "relu",
    "reshape",
    "softmax_cross_entropy",
    "sqrt",
    "stack",
    "sub",
    "tanh",
    "transpose",
]
