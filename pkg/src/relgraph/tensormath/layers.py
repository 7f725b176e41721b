"""Parameter containers for the ops in :mod:`relgraph.tensormath.ops`."""

from __future__ import annotations

from typing import Dict, Iterator, Tuple

import numpy as np

from . import ops
from .tensor import Tensor


class Module:
    """Holds named parameters, buffers and child modules.

    Names are dotted paths (``stem.conv.weight``) and are the keys used by
    checkpoints.
    """

    training: bool = True

    def __init__(self):
        self._params: Dict[str, Tensor] = {}
        self._buffers: Dict[str, np.ndarray] = {}
        self._children: Dict[str, "Module"] = {}
        self.training = True

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True)
        self._params[name] = t
        return t

    def add_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        self._buffers[name] = value
        return value

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(prefix + cname + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update({name: b for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        missing = [k for k in list(own) + list(bufs) if k not in state]
        if missing:
            raise KeyError(f"state is missing entries: {missing}")
        for name, p in own.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: expected {p.shape}, got {value.shape}")
            p.data = value.astype(p.dtype, copy=True)
        for name, b in bufs.items():
            value = np.asarray(state[name])
            if value.shape != b.shape:
                raise ValueError(f"shape mismatch for {name}: expected {b.shape}, got {value.shape}")
            b[...] = value


def _he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1, padding: int = 0,
                 rng=None, dtype=np.float32, bias: bool = False):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride = stride
        self.padding = padding
        self.weight = self.add_param("weight", _he_normal(rng, (out_ch, in_ch, kernel, kernel), in_ch * kernel * kernel, dtype))
        self.bias = self.add_param("bias", np.zeros(out_ch, dtype=dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng=None, dtype=np.float32,
                 bias: bool = True, std: float = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        if std is None:
            w = _he_normal(rng, (out_features, in_features), in_features, dtype)
        else:
            w = (rng.standard_normal((out_features, in_features)) * std).astype(dtype)
        self.weight = self.add_param("weight", w)
        self.bias = self.add_param("bias", np.zeros(out_features, dtype=dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class BatchNorm(Module):
    """Batch normalisation over axis 1 with running statistics."""

    def __init__(self, features: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = self.add_param("gamma", np.ones(features, dtype=dtype))
        self.beta = self.add_param("beta", np.zeros(features, dtype=dtype))
        self.running_mean = self.add_buffer("running_mean", np.zeros(features, dtype=dtype))
        self.running_var = self.add_buffer("running_var", np.ones(features, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training=self.training, momentum=self.momentum, eps=self.eps,
        )
