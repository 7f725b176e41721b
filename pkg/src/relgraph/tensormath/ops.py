"""Differentiable ops over :class:`Tensor`.

Every op computes its forward value with numpy and registers a backward
closure returning one gradient per parent (``None`` for non-differentiable
inputs). Broadcasting follows numpy; gradients are summed back to the
operand shapes.
"""

from __future__ import annotations

import builtins
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DimensionError, ParameterError, Tensor

ArrayLike = Union[Tensor, np.ndarray, float, int]


def _lift(value: ArrayLike, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype))


def _pair(a: ArrayLike, b: ArrayLike) -> Tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _lift(b, a)
    b = _lift(b)
    return _lift(a, b), b


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    out = a.data + b.data
    return Tensor._from_op(
        out, (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)),
        "add",
    )


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    out = a.data - b.data
    return Tensor._from_op(
        out, (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    out = a.data * b.data
    return Tensor._from_op(
        out, (a, b),
        lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def backward(g):
        ga = unbroadcast(g / b.data, a.shape)
        gb = unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return Tensor._from_op(out, (a, b), backward, "div")


def neg(a: Tensor) -> Tensor:
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)
    out = a.data ** exponent
    return Tensor._from_op(
        out, (a,),
        lambda g: (g * exponent * a.data ** (exponent - 1.0),),
        "power",
    )


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return Tensor._from_op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a: Tensor) -> Tensor:
    """Square root whose gradient at exactly 0 is taken as 0 instead of inf."""
    out = np.sqrt(a.data)

    def backward(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, g / (2.0 * safe), 0.0).astype(out.dtype),)

    return Tensor._from_op(out, (a,), backward, "sqrt")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor._from_op(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def clamp_min(a: Tensor, floor: float) -> Tensor:
    mask = a.data >= floor
    out = np.where(mask, a.data, np.asarray(floor, dtype=a.dtype))
    return Tensor._from_op(out, (a,), lambda g: (g * mask,), "clamp_min")


def hinge(a: Tensor) -> Tensor:
    """max(0, a); alias of relu kept for loss readability."""
    return relu(a)


# ---------------------------------------------------------------------------
# reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._from_op(np.asarray(out), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)
    scale = a.dtype.type(1.0 / count)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g * scale, a.shape).copy(),)

    return Tensor._from_op(np.asarray(out), (a,), backward, "mean")


def _extreme(a: Tensor, axis: Optional[int], keepdims: bool, pick_max: bool) -> Tensor:
    arg = np.argmax if pick_max else np.argmin
    if axis is None:
        flat = a.data.reshape(-1)
        idx = int(arg(flat))
        out = np.asarray(flat[idx])
        if keepdims:
            out = out.reshape((1,) * a.ndim)

        def backward(g):
            grad = np.zeros(a.size, dtype=a.dtype)
            grad[idx] = np.asarray(g).reshape(-1)[0]
            return (grad.reshape(a.shape),)

        return Tensor._from_op(out, (a,), backward, "max" if pick_max else "min")

    axis = axis % a.ndim
    idx = np.expand_dims(arg(a.data, axis=axis), axis)
    out = np.take_along_axis(a.data, idx, axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        grad = np.zeros_like(a.data)
        np.put_along_axis(grad, idx, g, axis=axis)
        return (grad,)

    return Tensor._from_op(out, (a,), backward, "max" if pick_max else "min")


def max(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    """Max reduction; the subgradient goes to the first maximiser in row-major order."""
    return _extreme(a, axis, keepdims, True)


def min(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    """Min reduction; the subgradient goes to the first minimiser in row-major order."""
    return _extreme(a, axis, keepdims, False)


# ---------------------------------------------------------------------------
# shape manipulation

def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)
    return Tensor._from_op(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is not None and len(axes) == 1 and isinstance(axes[0], (tuple, list)):
        axes = tuple(axes[0])
    out = np.transpose(a.data, axes)
    inverse = None if axes is None else tuple(np.argsort(axes))
    return Tensor._from_op(out, (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def index(a: Tensor, key) -> Tensor:
    if isinstance(key, Tensor):
        key = key.data.astype(np.int64)
    out = a.data[key]

    def backward(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, key, g)
        return (grad,)

    return Tensor._from_op(np.asarray(out), (a,), backward, "index")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._from_op(out, tensors, backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor._from_op(out, tensors, backward, "stack")


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return Tensor._from_op(out, (a, b), backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` over the last axis; a 1x1 convolution on vectors."""
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear shape mismatch: input {x.shape}, weight {weight.shape}")
    out = matmul(x, transpose(weight))
    return out if bias is None else add(out, bias)


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of ``x`` (B, C, H, W) with ``weight`` (O, C, kh, kw)."""
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"conv2d shape mismatch: input {x.shape}, weight {weight.shape}")
    if stride < 1 or padding < 0:
        raise ParameterError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}, {padding}")
    batch, channels, height, width = x.shape
    out_ch, _, kh, kw = weight.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    hp, wp = xp.shape[2], xp.shape[3]
    if hp < kh or wp < kw:
        raise DimensionError(f"conv2d kernel {weight.shape[2:]} larger than padded input {(hp, wp)}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(batch * ho * wo, channels * kh * kw)
    wmat = weight.data.reshape(out_ch, -1)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(batch, ho, wo, out_ch).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, out_ch)
        gw = (g2.T @ cols).reshape(weight.shape)
        gb = g2.sum(axis=0) if bias is not None else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(batch, ho, wo, channels, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            gx = gxp[:, :, padding:padding + height, padding:padding + width] if padding else gxp
        return (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, backward, "conv2d")


# ---------------------------------------------------------------------------
# normalisation and pooling

def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Batch normalisation over every axis except 1 (features/channels).

    In training mode the batch statistics are used and the running buffers
    are updated in place with the unbiased variance.
    """
    if x.ndim < 2 or x.shape[1] != gamma.shape[0]:
        raise DimensionError(f"batch_norm expects (B, C, ...) with C={gamma.shape[0]}, got {x.shape}")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = [1] * x.ndim
    bshape[1] = x.shape[1]
    count = int(np.prod([x.shape[ax] for ax in axes]))
    dt = x.dtype.type
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (count / builtins.max(count - 1, 1))
    else:
        mu = running_mean.astype(x.dtype, copy=False)
        var = running_var.astype(x.dtype, copy=False)
    inv_std = (1.0 / np.sqrt(var + dt(eps))).astype(x.dtype)
    xhat = (x.data - mu.reshape(bshape)) * inv_std.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        dxhat = g * gamma.data.reshape(bshape)
        if training:
            sum_d = dxhat.sum(axis=axes).reshape(bshape)
            sum_dx = (dxhat * xhat).sum(axis=axes).reshape(bshape)
            gx = (inv_std.reshape(bshape) / count) * (count * dxhat - sum_d - xhat * sum_dx)
        else:
            gx = dxhat * inv_std.reshape(bshape)
        return gx, ggamma, gbeta

    return Tensor._from_op(out, (x, gamma, beta), backward, "batch_norm")


def gem_pool(x: Tensor, p: Union[Tensor, float], eps: float = 1e-6) -> Tensor:
    """Generalised-mean pooling over the last two (spatial) axes.

    ``(mean(clamp(x, eps) ** p)) ** (1/p)``; evaluated relative to the window
    maximum so large ``p`` does not overflow. ``p`` may be a learnable scalar.
    """
    p = _lift(p, x)
    pv = float(p.data.reshape(-1)[0])
    if not pv > 0:
        raise ParameterError(f"gem_pool exponent must be > 0, got {pv}")
    if x.ndim < 2:
        raise DimensionError(f"gem_pool needs at least 2 spatial axes, got shape {x.shape}")
    dt = x.dtype.type
    pv_t = dt(pv)
    mask = x.data >= eps
    xc = np.where(mask, x.data, dt(eps))
    count = xc.shape[-1] * xc.shape[-2]
    peak = xc.max(axis=(-2, -1), keepdims=True)
    ratio = xc / peak
    powered = ratio ** pv_t
    mean_pow = powered.mean(axis=(-2, -1), keepdims=True)
    y = peak * mean_pow ** (dt(1.0) / pv_t)
    out = np.squeeze(y, axis=(-2, -1))

    def backward(g):
        gk = np.expand_dims(g, (-2, -1))
        r = xc / y
        rp = r ** pv_t
        gx = gk * (r ** (pv_t - dt(1.0))) / dt(count)
        gx = np.where(mask, gx, dt(0.0))
        dy_dp = (y / pv_t) * ((rp * np.log(xc)).mean(axis=(-2, -1), keepdims=True) - np.log(y))
        gp = np.asarray((gk * dy_dp).sum()).reshape(p.shape).astype(p.dtype)
        return gx, gp

    return Tensor._from_op(out, (x, p), backward, "gem_pool")


def l2_normalize(v: Tensor, axis: int = -1, return_flag: bool = False, tol: float = 1e-12):
    """Scale ``v`` to unit Euclidean norm along ``axis``.

    Slices whose norm is below ``tol`` pass through unchanged; with
    ``return_flag`` a boolean array marking those degenerate slices is also
    returned.
    """
    sq = sum(mul(v, v), axis=axis, keepdims=True)
    norm_data = np.sqrt(sq.data)
    degenerate = norm_data < tol
    safe = Tensor._from_op(
        np.where(degenerate, 1.0, norm_data).astype(v.dtype),
        (sq,),
        lambda g: (np.where(degenerate, 0.0, g / (2.0 * np.where(degenerate, 1.0, norm_data))).astype(v.dtype),),
        "safe_norm",
    )
    out = div(v, safe)
    if return_flag:
        return out, np.squeeze(degenerate, axis=axis)
    return out


# ---------------------------------------------------------------------------
# classification

def log_softmax(logits: Tensor, axis: int = -1) -> Tensor:
    shifted = logits.data - logits.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def backward(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out, (logits,), backward, "log_softmax")


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of integer ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross-entropy expects logits (B, C) and labels (B,), got {logits.shape}, {labels.shape}")
    n_classes = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        bad = labels[(labels < 0) | (labels >= n_classes)]
        raise ValueError(f"label {int(bad[0])} out of range for {n_classes} classes")
    logp = log_softmax(logits, axis=1)
    picked = index(logp, (np.arange(labels.size), labels))
    return neg(mean(picked))
