"""Two-stream convolutional extractor and horizontal part partition."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .tensormath import Tensor, ops
from .tensormath.layers import BatchNorm, Conv2d, Module

MODALITIES = ("vis", "ir")


class ConfigError(ValueError):
    """Backbone geometry is inconsistent or an input does not match it."""


class PartitionError(ValueError):
    """Feature-map height is not divisible by the node count."""


def _conv_out(size: int, stride: int, kernel: int = 3, padding: int = 1) -> int:
    return (size + 2 * padding - kernel) // stride + 1


@dataclass(frozen=True)
class BackboneConfig:
    input_shape: Tuple[int, int, int] = (3, 48, 24)
    stem_channels: Tuple[int, ...] = (8,)
    stem_stride: int = 2
    body_channels: Tuple[int, ...] = (16, 32)
    body_strides: Tuple[int, ...] = (2, 1)
    num_nodes: int = 6
    feat_dim: int = 32
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ConfigError(f"input_shape must be (C, H, W) with positive extents, got {self.input_shape}")
        if not self.stem_channels or not self.body_channels:
            raise ConfigError("stem_channels and body_channels must be non-empty")
        if len(self.body_channels) != len(self.body_strides):
            raise ConfigError(
                f"body_channels {self.body_channels} and body_strides {self.body_strides} differ in length"
            )
        if self.body_channels[-1] != self.feat_dim:
            raise ConfigError(f"feat_dim {self.feat_dim} must equal the last body width {self.body_channels[-1]}")
        if self.num_nodes < 1:
            raise ConfigError(f"num_nodes must be >= 1, got {self.num_nodes}")
        h = self.output_shape[1]
        if h % self.num_nodes:
            raise ConfigError(f"feature-map height {h} is not a multiple of num_nodes={self.num_nodes}")

    @property
    def output_shape(self) -> Tuple[int, int, int]:
        _, h, w = self.input_shape
        strides = [1] * (len(self.stem_channels) - 1) + [self.stem_stride] + list(self.body_strides)
        for s in strides:
            h, w = _conv_out(h, s), _conv_out(w, s)
        return (self.body_channels[-1], h, w)


@dataclass
class NodeGraph:
    """Part-node features of one image (N, d) or a batch of images (B, N, d)."""

    nodes: Tensor
    modality: str = "vis"
    _edges: Optional[Tensor] = field(default=None, repr=False)

    def __post_init__(self):
        if not isinstance(self.nodes, Tensor):
            self.nodes = Tensor(np.asarray(self.nodes, dtype=np.float64))
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}, got {self.modality!r}")
        if self.nodes.ndim not in (2, 3):
            raise ValueError(f"nodes must be (N, d) or (B, N, d), got shape {self.nodes.shape}")

    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[-2]

    @property
    def dim(self) -> int:
        return self.nodes.shape[-1]

    @property
    def edges(self) -> Tensor:
        if self._edges is None:
            from .hosg import edge_weights
            self._edges = edge_weights(self)
        return self._edges


class _ConvBlock(Module):
    def __init__(self, in_ch, out_ch, stride, rng, dtype, momentum, eps):
        super().__init__()
        self.conv = self.add_child("conv", Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, rng=rng, dtype=dtype))
        self.bn = self.add_child("bn", BatchNorm(out_ch, momentum=momentum, eps=eps, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.relu(self.bn(self.conv(x)))


class TwoStreamBackbone(Module):
    """Modality-specific stems feeding a shared convolutional body."""

    def __init__(self, config: BackboneConfig = BackboneConfig(), rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.config = config
        c_in = config.input_shape[0]
        self.stems: Dict[str, Module] = {}
        for modality in MODALITIES:
            stem = Module()
            ch = c_in
            for k, width in enumerate(config.stem_channels):
                stride = config.stem_stride if k == len(config.stem_channels) - 1 else 1
                stem.add_child(str(k), _ConvBlock(ch, width, stride, rng, dtype, config.bn_momentum, config.bn_eps))
                ch = width
            self.stems[modality] = self.add_child(f"stem_{modality}", stem)
        body = Module()
        for k, (width, stride) in enumerate(zip(config.body_channels, config.body_strides)):
            body.add_child(str(k), _ConvBlock(ch, width, stride, rng, dtype, config.bn_momentum, config.bn_eps))
            ch = width
        self.body = self.add_child("body", body)

    def stem(self, images: Tensor, modality: str) -> Tensor:
        if modality not in self.stems:
            raise ConfigError(f"unknown modality {modality!r}; expected one of {MODALITIES}")
        x = images
        for block in self.stems[modality]._children.values():
            x = block(x)
        return x

    def shared(self, x: Tensor) -> Tensor:
        for block in self.body._children.values():
            x = block(x)
        return x

    def extract(self, images, modality: str) -> Tensor:
        """Feature map (B, d, h', w') for a batch, or (d, h', w') for one image."""
        images = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=self.body.parameters()[0].dtype))
        single = images.ndim == 3
        if single:
            images = images.reshape((1,) + images.shape)
        if images.ndim != 4 or tuple(images.shape[1:]) != tuple(self.config.input_shape):
            raise ConfigError(f"expected images of shape (B, {self.config.input_shape}), got {images.shape}")
        out = self.shared(self.stem(images, modality))
        return out.reshape(out.shape[1:]) if single else out


def partition(featmap: Tensor, num_nodes: int, p=3.0, modality: str = "vis", eps: float = 1e-6) -> NodeGraph:
    """Split the map into ``num_nodes`` equal horizontal strips and GeM-pool each.

    Accepts (d, h, w) or (B, d, h, w); the returned graph has nodes (N, d)
    or (B, N, d).
    """
    single = featmap.ndim == 3
    if single:
        featmap = featmap.reshape((1,) + featmap.shape)
    batch, dim, height, width = featmap.shape
    if num_nodes < 1 or height % num_nodes:
        raise PartitionError(f"height {height} is not divisible into {num_nodes} strips")
    strip = height // num_nodes
    x = featmap.reshape(batch, dim, num_nodes, strip, width).transpose(0, 2, 1, 3, 4)
    nodes = ops.gem_pool(x, p, eps=eps)
    if single:
        nodes = nodes.reshape(nodes.shape[1:])
    return NodeGraph(nodes, modality)
