"""Homogeneous structured graph: one-vs-rest relations and residual node update."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .backbone import NodeGraph
from .tensormath import Tensor, ops
from .tensormath.layers import BatchNorm, Linear, Module


class GraphError(ValueError):
    pass


def _check_graph(g: NodeGraph, index: Optional[int] = None) -> None:
    n = g.num_nodes
    if n < 2:
        raise GraphError(f"graph needs at least 2 nodes, got {n}")
    if index is not None and not 0 <= index < n:
        raise IndexError(f"node index {index} out of range for {n} nodes")


def edge_weights(g: NodeGraph) -> Tensor:
    """Squared Euclidean distance between every pair of nodes, shape (..., N, N)."""
    _check_graph(g)
    v = g.nodes
    diff = ops.sub(ops.reshape(v, v.shape[:-1] + (1, v.shape[-1])), ops.reshape(v, v.shape[:-2] + (1,) + v.shape[-2:]))
    return ops.sum(ops.mul(diff, diff), axis=-1)


def rest_features(nodes: Tensor) -> Tensor:
    """Mean of the other N-1 nodes for every node, same shape as ``nodes``."""
    n = nodes.shape[-2]
    total = ops.sum(nodes, axis=-2, keepdims=True)
    return ops.div(ops.sub(total, nodes), float(n - 1))


def rest_aggregate(g: NodeGraph, i: int) -> Tensor:
    """Aggregated feature of every node except node ``i`` (0-based)."""
    _check_graph(g, i)
    return ops.index(rest_features(g.nodes), (Ellipsis, i, slice(None)))


def one_vs_rest_edge(g: NodeGraph, i: int) -> Tensor:
    """Squared distance between node ``i`` and the mean of the remaining nodes."""
    _check_graph(g, i)
    diff = ops.sub(ops.index(g.nodes, (Ellipsis, i, slice(None))), rest_aggregate(g, i))
    return ops.sum(ops.mul(diff, diff), axis=-1)


class HosgParams(Module):
    """Fusion map F = 1x1 conv (2d -> d) + BN + ReLU, and the stream's GeM exponent."""

    def __init__(self, dim: int, rng=None, dtype=np.float32, gem_p: float = 3.0,
                 bn_momentum: float = 0.1, bn_eps: float = 1e-5):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dim = dim
        self.fuse = self.add_child("fuse", Linear(2 * dim, dim, rng=rng, dtype=dtype, std=np.sqrt(1.0 / (2 * dim))))
        self.bn = self.add_child("bn", BatchNorm(dim, momentum=bn_momentum, eps=bn_eps, dtype=dtype))
        self.gem_p = self.add_param("gem_p", np.asarray(gem_p, dtype=dtype))

    def residual(self, nodes: Tensor, rest: Tensor) -> Tensor:
        if nodes.shape[-1] != self.dim:
            raise ValueError(f"node dimension {nodes.shape[-1]} does not match fusion dimension {self.dim}")
        lead = nodes.shape[:-1]
        pair = ops.concat([nodes, rest], axis=-1)
        flat = ops.reshape(pair, (-1, 2 * self.dim))
        fused = ops.relu(self.bn(self.fuse(flat)))
        return ops.reshape(fused, lead + (self.dim,))


def update_nodes(g: NodeGraph, params: HosgParams) -> NodeGraph:
    """Residual one-vs-rest update: node + F([node; rest mean]).

    BN inside F normalises over every (image, node) pair in the batch.
    """
    _check_graph(g)
    rest = rest_features(g.nodes)
    return NodeGraph(ops.add(g.nodes, params.residual(g.nodes, rest)), g.modality)


def global_feature(g: NodeGraph, bn: Optional[BatchNorm] = None) -> Tensor:
    """Mean over the nodes, followed by ``bn`` when given; shape (d,) or (B, d)."""
    pooled = ops.mean(g.nodes, axis=-2)
    if bn is None:
        return pooled
    if pooled.ndim == 1:
        return ops.reshape(bn(ops.reshape(pooled, (1, -1))), (-1,))
    return bn(pooled)
