"""The full network: two-stream backbone, per-modality graphs, shared neck, classifier."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..backbone import NodeGraph, TwoStreamBackbone, partition
from ..hosg import HosgParams, global_feature, update_nodes
from ..tensormath import Tensor, ops
from ..tensormath.layers import BatchNorm, Linear, Module
from .config import TrainConfig


@dataclass
class Forward:
    vis_nodes: Tensor
    ir_nodes: Tensor
    vis_feat: Tensor
    ir_feat: Tensor
    logits: Tensor


class RelationalGraphNet(Module):
    def __init__(self, config: TrainConfig, num_classes: int, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng([config.seed, 0])
        self.config = config
        self.num_classes = num_classes
        d = config.feat_dim
        self.backbone = self.add_child("backbone", TwoStreamBackbone(config.backbone, rng=rng, dtype=dtype))
        self.hosg = {
            m: self.add_child(f"hosg_{m}", HosgParams(d, rng=rng, dtype=dtype, gem_p=config.gem_p,
                                                     bn_momentum=config.bn_momentum, bn_eps=config.bn_eps))
            for m in ("vis", "ir")
        }
        self.neck = self.add_child("neck", BatchNorm(d, momentum=config.bn_momentum, eps=config.bn_eps, dtype=dtype))
        self.classifier = self.add_child("classifier", Linear(d, num_classes, rng=rng, dtype=dtype, bias=False, std=0.01))

    @property
    def dtype(self):
        return self.neck.gamma.dtype

    def graph(self, featmap: Tensor, modality: str) -> NodeGraph:
        params = self.hosg[modality]
        nodes = partition(featmap, self.config.num_nodes, params.gem_p, modality)
        return update_nodes(nodes, params)

    def forward(self, vis_images, ir_images) -> Forward:
        vis = Tensor(np.asarray(vis_images, dtype=self.dtype))
        ir = Tensor(np.asarray(ir_images, dtype=self.dtype))
        bb = self.backbone
        stems = ops.concat([bb.stem(vis, "vis"), bb.stem(ir, "ir")], axis=0)
        fmap = bb.shared(stems)
        nv = vis.shape[0]
        g_vis = self.graph(ops.index(fmap, slice(0, nv)), "vis")
        g_ir = self.graph(ops.index(fmap, slice(nv, None)), "ir")
        feats = global_feature(NodeGraph(ops.concat([g_vis.nodes, g_ir.nodes], axis=0), "vis"), self.neck)
        logits = self.classifier(feats)
        return Forward(
            vis_nodes=g_vis.nodes,
            ir_nodes=g_ir.nodes,
            vis_feat=ops.index(feats, slice(0, nv)),
            ir_feat=ops.index(feats, slice(nv, None)),
            logits=logits,
        )

    def align_nodes(self, nodes: Tensor) -> Tensor:
        return ops.l2_normalize(nodes, axis=-1) if self.config.align_normalize else nodes

    def embed(self, images, modality: str, chunk: int = 64) -> Tuple[np.ndarray, np.ndarray]:
        """Eval-mode (global features, alignment-ready nodes) as numpy arrays."""
        was_training = self.training
        self.eval()
        try:
            feats, nodes = [], []
            images = np.asarray(images, dtype=self.dtype)
            for start in range(0, images.shape[0], chunk):
                x = Tensor(images[start:start + chunk])
                fmap = self.backbone.shared(self.backbone.stem(x, modality))
                g = self.graph(fmap, modality)
                f = global_feature(g, self.neck)
                feats.append(f.data)
                nodes.append(self.align_nodes(g.nodes).data)
        finally:
            self.train(was_training)
        d, n = self.config.feat_dim, self.config.num_nodes
        if not feats:
            return np.zeros((0, d), self.dtype), np.zeros((0, n, d), self.dtype)
        return np.concatenate(feats), np.concatenate(nodes)

    def logits(self, feats: np.ndarray) -> np.ndarray:
        return np.asarray(feats, dtype=self.dtype) @ self.classifier.weight.data.T
