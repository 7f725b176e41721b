"""Heterogeneous graph alignment by monotone shortest path.

Indices are 0-based: a path runs from (0, 0) to (H-1, H-1), moving one
row down or one column right per step.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb
from typing import List, Optional, Tuple

import numpy as np

from .backbone import NodeGraph
from .tensormath import Tensor, ops

Path = List[Tuple[int, int]]


class AlignmentError(ValueError):
    pass


class OracleRangeError(AlignmentError):
    """Exhaustive enumeration requested for a matrix that is too large."""


class StateError(RuntimeError):
    """The DP table has not been computed yet."""


@dataclass
class AlignMatrix:
    raw: Optional[Tensor]
    normalized: Tensor
    dp: Optional[np.ndarray] = field(default=None, repr=False)
    path: Optional[Path] = None

    @classmethod
    def from_normalized(cls, values) -> "AlignMatrix":
        t = values if isinstance(values, Tensor) else Tensor(np.asarray(values, dtype=np.float64))
        return cls(raw=None, normalized=t)

    @property
    def size(self) -> int:
        return self.normalized.shape[-1]


def squash(raw: Tensor) -> Tensor:
    """(exp(x) - 1) / (exp(x) + 1), written as tanh(x / 2) to stay finite for large x."""
    return ops.tanh(ops.mul(raw, 0.5))


def pairwise_node_distances(vis_nodes: Tensor, ir_nodes: Tensor) -> Tensor:
    """Euclidean distance between every visible and every infrared node.

    ``vis_nodes`` (..., H, d) and ``ir_nodes`` (..., H, d) broadcast over the
    leading axes; the result is (..., H, H).
    """
    a = ops.reshape(vis_nodes, vis_nodes.shape[:-1] + (1, vis_nodes.shape[-1]))
    b = ops.reshape(ir_nodes, ir_nodes.shape[:-2] + (1,) + ir_nodes.shape[-2:])
    diff = ops.sub(a, b)
    return ops.sqrt(ops.sum(ops.mul(diff, diff), axis=-1))


def cross_edges(vis: NodeGraph, ir: NodeGraph) -> AlignMatrix:
    if vis.num_nodes != ir.num_nodes:
        raise AlignmentError(f"node counts differ: {vis.num_nodes} visible vs {ir.num_nodes} infrared")
    if vis.dim != ir.dim:
        raise AlignmentError(f"node dimensions differ: {vis.dim} vs {ir.dim}")
    raw = pairwise_node_distances(vis.nodes, ir.nodes)
    return AlignMatrix(raw=raw, normalized=squash(raw))


def _dp_forward(edges: np.ndarray) -> np.ndarray:
    h, w = edges.shape[-2:]
    table = np.empty_like(edges)
    table[..., 0, 0] = edges[..., 0, 0]
    for i in range(1, h):
        table[..., i, 0] = table[..., i - 1, 0] + edges[..., i, 0]
    for j in range(1, w):
        table[..., 0, j] = table[..., 0, j - 1] + edges[..., 0, j]
    for i in range(1, h):
        for j in range(1, w):
            table[..., i, j] = np.minimum(table[..., i - 1, j], table[..., i, j - 1]) + edges[..., i, j]
    return table


def _trace(table: np.ndarray) -> np.ndarray:
    """Boolean mask (..., H, W) of the cells on each minimising path.

    Walking back from the corner, the upper predecessor wins ties.
    """
    h, w = table.shape[-2:]
    lead = table.shape[:-2]
    flat = table.reshape((-1, h, w))
    count = flat.shape[0]
    rows = np.arange(count)
    i = np.full(count, h - 1)
    j = np.full(count, w - 1)
    mask = np.zeros(flat.shape, dtype=bool)
    mask[rows, i, j] = True
    for _ in range(h + w - 2):
        up_val = np.where(i > 0, flat[rows, np.maximum(i - 1, 0), j], np.inf)
        left_val = np.where(j > 0, flat[rows, i, np.maximum(j - 1, 0)], np.inf)
        go_up = up_val <= left_val
        i = np.where(go_up, i - 1, i)
        j = np.where(go_up, j, j - 1)
        mask[rows, i, j] = True
    return mask.reshape(lead + (h, w))


def shortest_path_distance(edges: Tensor) -> Tuple[Tensor, np.ndarray]:
    """Batched S[H-1, H-1] over the last two axes, with the DP tables.

    The gradient of each distance is 1 on the cells of its traced path and 0
    elsewhere.
    """
    if edges.ndim < 2 or edges.shape[-1] == 0 or edges.shape[-2] == 0:
        raise AlignmentError(f"alignment needs a non-empty (..., H, W) matrix, got shape {edges.shape}")
    table = _dp_forward(edges.data)
    out = table[..., -1, -1].copy()

    def backward(g):
        mask = _trace(table)
        return (np.asarray(g)[..., None, None] * mask,)

    return Tensor._from_op(out, (edges,), backward, "shortest_path"), table


def local_distance(m: AlignMatrix) -> Tensor:
    """Length of the cheapest monotone path through ``m.normalized``; fills ``m.dp``."""
    if m.normalized is None or m.normalized.size == 0:
        raise AlignmentError("alignment matrix is empty")
    dist, table = shortest_path_distance(m.normalized)
    m.dp = table
    m.path = None
    return dist


def trace_path(m: AlignMatrix) -> Path:
    if m.dp is None:
        raise StateError("local_distance must be computed before tracing the path")
    if m.dp.ndim != 2:
        raise StateError(f"trace_path works on a single matrix, DP table has shape {m.dp.shape}")
    mask = _trace(m.dp)
    # a monotone path visits cells in increasing (i + j) order
    cells = sorted(zip(*np.nonzero(mask)), key=lambda c: (c[0] + c[1], c[0]))
    m.path = [(int(i), int(j)) for i, j in cells]
    return m.path


def brute_force_distance(m: AlignMatrix, max_size: int = 10) -> float:
    """Minimum edge sum over every monotone path, by exhaustive enumeration."""
    edges = np.asarray(m.normalized.data if isinstance(m.normalized, Tensor) else m.normalized, dtype=np.float64)
    if edges.ndim != 2 or edges.size == 0:
        raise AlignmentError(f"brute force needs a non-empty 2-D matrix, got shape {edges.shape}")
    h, w = edges.shape
    if max(h, w) > max_size:
        raise OracleRangeError(f"matrix {h}x{w} exceeds oracle limit {max_size} ({comb(h + w - 2, h - 1)} paths)")
    best = np.inf
    steps = h + w - 2
    for downs in itertools.combinations(range(steps), h - 1):
        i = j = 0
        total = edges[0, 0]
        down_set = set(downs)
        for s in range(steps):
            if s in down_set:
                i += 1
            else:
                j += 1
            total += edges[i, j]
        best = min(best, total)
    return float(best)
