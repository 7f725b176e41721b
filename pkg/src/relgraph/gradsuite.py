"""Finite-difference checks for every differentiable op and loss.

Each case builds float64 inputs from a seed and returns ``(name, f, x)``
for :func:`relgraph.tensormath.grad_check`.
"""

from __future__ import annotations

from typing import Callable, Iterator, List, Tuple

import numpy as np

from . import hgam, hosg, objectives
from .backbone import NodeGraph, partition
from .tensormath import Tensor, grad_check, ops
from .tensormath.layers import BatchNorm

Case = Tuple[str, Callable[[Tensor], Tensor], np.ndarray]
F64 = np.float64


class _Probe:
    """Fixed random linear functional, so every output coordinate matters.

    The weights are drawn once per output shape and reused on every call.
    """

    def __init__(self, rng: np.random.Generator):
        self.seed = int(rng.integers(2**31))
        self.weights = {}

    def __call__(self, out: Tensor) -> Tensor:
        if out.shape not in self.weights:
            self.weights[out.shape] = np.random.default_rng(self.seed).standard_normal(out.shape)
        return ops.sum(ops.mul(out, Tensor(self.weights[out.shape])))


def cases(seed: int) -> Iterator[Case]:
    rng = np.random.default_rng(seed)
    r = lambda *shape: rng.standard_normal(shape)  # noqa: E731
    pos = lambda *shape: rng.uniform(0.5, 2.0, shape)  # noqa: E731

    b = Tensor(r(3, 4))
    yield "add", lambda x, probe=_Probe(rng): probe(ops.add(x, b)), r(3, 4)
    yield "sub", lambda x, probe=_Probe(rng): probe(ops.sub(b, x)), r(3, 4)
    row = Tensor(r(1, 4))
    yield "mul", lambda x, probe=_Probe(rng): probe(ops.mul(x, row)), r(3, 4)
    yield "div", lambda x, probe=_Probe(rng): probe(ops.div(b, x)), pos(3, 4)
    yield "power", lambda x, probe=_Probe(rng): probe(ops.power(x, 2.5)), pos(3, 4)
    yield "exp", lambda x, probe=_Probe(rng): probe(ops.exp(x)), r(3, 4)
    yield "log", lambda x, probe=_Probe(rng): probe(ops.log(x)), pos(3, 4)
    yield "sqrt", lambda x, probe=_Probe(rng): probe(ops.sqrt(x)), pos(3, 4)
    yield "tanh", lambda x, probe=_Probe(rng): probe(ops.tanh(x)), r(3, 4)
    yield "relu", lambda x, probe=_Probe(rng): probe(ops.relu(x)), r(3, 4) + 0.01
    yield "clamp_min", lambda x, probe=_Probe(rng): probe(ops.clamp_min(x, 0.1)), r(3, 4)
    yield "sum_axis", lambda x, probe=_Probe(rng): probe(ops.sum(x, axis=1)), r(3, 4)
    yield "mean_axis", lambda x, probe=_Probe(rng): probe(ops.mean(x, axis=0, keepdims=True)), r(3, 4)
    yield "max_axis", lambda x, probe=_Probe(rng): probe(ops.max(x, axis=1)), r(3, 4)
    yield "min_all", lambda x: ops.mul(ops.min(x), 3.0), r(3, 4)
    yield "reshape_transpose", lambda x, probe=_Probe(rng): probe(ops.transpose(ops.reshape(x, (2, 6)))), r(3, 4)
    yield "index", lambda x, probe=_Probe(rng): probe(ops.index(x, (np.array([0, 2, 2]), np.array([1, 3, 1])))), r(3, 4)
    yield "concat_stack", lambda x, probe=_Probe(rng): probe(ops.stack([ops.concat([x, x], axis=1), ops.concat([b, x], axis=1)])), r(3, 4)
    m = Tensor(r(4, 2))
    yield "matmul", lambda x, probe=_Probe(rng): probe(ops.matmul(x, m)), r(3, 4)
    w, wb = Tensor(r(5, 4)), Tensor(r(5))
    yield "linear", lambda x, probe=_Probe(rng): probe(ops.linear(x, w, wb)), r(3, 4)

    cw = Tensor(r(3, 2, 3, 3))
    cb = Tensor(r(3))
    yield "conv2d_input", lambda x, probe=_Probe(rng): probe(ops.conv2d(x, cw, cb, stride=2, padding=1)), r(2, 2, 5, 4)
    cx = Tensor(r(2, 2, 5, 4))
    yield "conv2d_weight", lambda x, probe=_Probe(rng): probe(ops.conv2d(cx, x, cb, stride=1, padding=1)), r(3, 2, 3, 3)

    bn = BatchNorm(3, dtype=F64)
    yield "batch_norm_train", lambda x, probe=_Probe(rng): probe(bn(x)), r(4, 3, 2, 2)
    bn_eval = BatchNorm(3, dtype=F64).eval()
    bn_eval.running_mean[:] = r(3)
    bn_eval.running_var[:] = pos(3)
    yield "batch_norm_eval", lambda x, probe=_Probe(rng): probe(bn_eval(x)), r(4, 3)
    xg = r(5, 3)
    yield "batch_norm_affine", lambda x, probe=_Probe(rng): probe(
        ops.batch_norm(Tensor(xg), ops.index(x, 0), ops.index(x, 1), np.zeros(3), np.ones(3), True)
    ), r(2, 3)

    yield "gem_pool_input", lambda x, probe=_Probe(rng): probe(ops.gem_pool(x, 3.0)), pos(2, 4, 4)
    gx = Tensor(pos(2, 3, 3))
    yield "gem_pool_exponent", lambda x, probe=_Probe(rng): probe(ops.gem_pool(gx, ops.reshape(x, ()))), np.array([3.0])
    yield "l2_normalize", lambda x, probe=_Probe(rng): probe(ops.l2_normalize(x, axis=-1)), r(3, 4)
    yield "log_softmax", lambda x, probe=_Probe(rng): probe(ops.log_softmax(x)), r(3, 4)
    targets = rng.integers(0, 4, 3)
    yield "softmax_cross_entropy", lambda x: ops.softmax_cross_entropy(x, targets), r(3, 4)

    # graph modules
    yield "partition", lambda x, probe=_Probe(rng): probe(partition(x, 3, 3.0).nodes), pos(2, 6, 4)
    yield "edge_weights", lambda x, probe=_Probe(rng): probe(hosg.edge_weights(NodeGraph(x))), r(4, 3)
    yield "one_vs_rest_edge", lambda x: ops.sum(ops.stack([hosg.one_vs_rest_edge(NodeGraph(x), i) for i in range(4)])), r(4, 3)
    params = hosg.HosgParams(3, rng=np.random.default_rng(seed), dtype=F64)
    params.bn.beta.data[:] = 0.5  # keep most ReLU units active so the check is informative
    yield "hosg_update_nodes", lambda x, probe=_Probe(rng): probe(hosg.update_nodes(NodeGraph(x), params).nodes), r(2, 4, 3)
    nodes = NodeGraph(Tensor(r(2, 4, 3)))
    # standardised values over 8 rows stay below sqrt(7), so beta=3 keeps every unit off the ReLU kink
    fparams = hosg.HosgParams(3, rng=np.random.default_rng(seed + 1), dtype=F64)
    fparams.bn.beta.data[:] = 3.0

    def fusion_weights(x, probe=_Probe(rng)):
        saved = fparams.fuse.weight
        fparams.fuse.weight = x
        try:
            return probe(hosg.update_nodes(nodes, fparams).nodes)
        finally:
            fparams.fuse.weight = saved

    yield "hosg_fusion_weights", fusion_weights, fparams.fuse.weight.data.copy()
    neck = BatchNorm(3, dtype=F64)
    yield "global_feature", lambda x, probe=_Probe(rng): probe(hosg.global_feature(NodeGraph(x), neck)), r(3, 4, 3)
    ir = Tensor(r(4, 3))
    yield "cross_edges", lambda x, probe=_Probe(rng): probe(hgam.cross_edges(NodeGraph(x), NodeGraph(ir, "ir")).normalized), r(4, 3)
    yield "local_distance", lambda x: ops.sum(hgam.local_distance(hgam.AlignMatrix.from_normalized(x))), rng.uniform(0, 1, (5, 5))
    yield "local_distance_batched", lambda x, probe=_Probe(rng): probe(hgam.shortest_path_distance(x)[0]), rng.uniform(0, 1, (3, 4, 4))

    # losses
    labels = np.array([0, 0, 1, 1, 2, 2, 0, 1, 2, 2])
    mods = np.array(["vis"] * 6 + ["ir"] * 4)
    yield "loss_id", lambda x: objectives.id_loss(x, labels), r(10, 3)
    yield "loss_hetero_center_triplet", lambda x: objectives.hetero_center_triplet(x, labels, mods, margin=2.0), r(10, 4)
    yield "loss_cmcc", lambda x: objectives.cmcc_loss(x, labels, mods, alpha=0.05), r(10, 4)
    vis_lab = np.array([0, 0, 1, 1])
    ir_lab = np.array([1, 0, 1, 0])
    irn = Tensor(r(4, 3, 2))
    yield "loss_local_align", lambda x: objectives.local_align_loss(x, vis_lab, irn, ir_lab, margin=5.0), r(4, 3, 2)

    def total(x):
        comps = {
            "L_id": objectives.id_loss(x, labels),
            "L_tc": objectives.hetero_center_triplet(x, labels, mods, margin=2.0),
            "L_cc": objectives.cmcc_loss(x, labels, mods, alpha=0.05),
        }
        return objectives.total_loss(comps, objectives.LossWeights())[0]

    yield "loss_total", total, r(10, 3)


def run_suite(seeds=range(10), tol: float = 1e-4, h: float = 1e-5) -> List[Tuple[str, int, float, bool]]:
    """(case name, seed, max relative error, passed) for every case and seed."""
    results = []
    for seed in seeds:
        for name, f, x in cases(seed):
            err = grad_check(f, x, h=h)
            results.append((name, seed, err, err < tol))
    return results
