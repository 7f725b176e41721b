"""Central-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor


class EvaluationError(ArithmeticError):
    """The checked function produced a non-finite value."""


def _scalar(f: Callable[[Tensor], Tensor], x: np.ndarray) -> float:
    out = f(Tensor(x))
    value = np.asarray(out.data if isinstance(out, Tensor) else out, dtype=np.float64)
    if value.size != 1:
        raise EvaluationError(f"checked function must return a scalar, got shape {value.shape}")
    value = float(value.reshape(-1)[0])
    if not np.isfinite(value):
        raise EvaluationError(f"checked function returned {value}")
    return value


def grad_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-5) -> float:
    """Max over coordinates of |analytic - numeric| / max(1, |analytic|).

    ``f`` maps a tensor to a scalar tensor. ``x`` is promoted to float64 and
    the numeric gradient uses central differences with step ``h``.
    """
    x = np.array(x, dtype=np.float64)
    xt = Tensor(x.copy(), requires_grad=True)
    out = f(xt)
    value = float(np.asarray(out.data).reshape(-1)[0])
    if not np.isfinite(value):
        raise EvaluationError(f"checked function returned {value}")
    out.backward()
    analytic = xt.grad if xt.grad is not None else np.zeros_like(x)

    numeric = np.zeros_like(x)
    flat = x.reshape(-1)
    nflat = numeric.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        up = _scalar(f, x.copy())
        flat[k] = orig - h
        down = _scalar(f, x.copy())
        flat[k] = orig
        nflat[k] = (up - down) / (2.0 * h)

    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(err.max()) if err.size else 0.0
