"""SGD training loop over P x K two-modality batches."""

from __future__ import annotations

import csv
import logging
from typing import Dict, List, Optional

import numpy as np

from ..dataio import IdentityBatch, IdentitySampler
from ..objectives import (
    cmcc_loss,
    hetero_center_triplet,
    id_loss,
    local_align_loss,
    total_loss,
)
from ..tensormath import ops
from .config import TrainConfig, lr_at
from .model import RelationalGraphNet

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ("step", "lr", "L_id", "L_tc", "L_cc", "L_local", "L_total")


class SGD:
    """SGD with momentum and L2 weight decay (decay folded into the gradient)."""

    def __init__(self, params: Dict[str, "object"], momentum: float = 0.9, weight_decay: float = 5e-4):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buffers = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self, lr: float) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                continue
            dt = p.data.dtype.type
            g = p.grad + dt(self.weight_decay) * p.data
            buf = self.buffers[name]
            buf *= dt(self.momentum)
            buf += g
            p.data -= dt(lr) * buf

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def compute_losses(model: RelationalGraphNet, images: np.ndarray, batch: IdentityBatch, config: TrainConfig,
                   class_index: Dict[int, int], step=None):
    """Forward pass and every loss component for one batch; returns (total, values)."""
    out = model.forward(images[batch.vis_indices], images[batch.ir_indices])
    labels = batch.labels
    modalities = batch.modalities
    targets = np.array([class_index[int(y)] for y in labels])
    feats = ops.concat([out.vis_feat, out.ir_feat], axis=0)
    w = config.loss_weights
    components = {
        "L_id": id_loss(out.logits, targets),
        "L_tc": hetero_center_triplet(feats, labels, modalities, w.margin),
        "L_cc": cmcc_loss(feats, labels, modalities, w.alpha),
        "L_local": local_align_loss(
            model.align_nodes(out.vis_nodes), batch.vis_labels,
            model.align_nodes(out.ir_nodes), batch.ir_labels, w.local_margin,
        ),
    }
    return total_loss(components, w, step=step)


class Trainer:
    """Owns the model, optimiser, sampler and step counter for one run."""

    def __init__(self, config: TrainConfig, images: np.ndarray, labels, modalities):
        self.config = config
        self.images = np.asarray(images, dtype=np.float32)
        self.labels = np.asarray(labels)
        self.modalities = np.asarray(modalities)
        self.classes = np.unique(self.labels)
        self.class_index = {int(c): k for k, c in enumerate(self.classes)}
        self.model = RelationalGraphNet(config, num_classes=self.classes.size)
        self.model.train()
        self.optimizer = SGD(dict(self.model.named_parameters()), config.momentum, config.weight_decay)
        self.sampler = IdentitySampler(
            self.labels, self.modalities, config.P, config.K_vis, config.K_ir,
            np.random.default_rng([config.seed, 1]),
        )
        self.step = 0
        self.trace: List[Dict[str, float]] = []

    @property
    def steps_per_epoch(self) -> int:
        if self.config.steps_per_epoch > 0:
            return self.config.steps_per_epoch
        n_vis = int((self.modalities == "vis").sum())
        return max(1, n_vis // (self.config.P * self.config.K_vis))

    @property
    def total_steps(self) -> int:
        return self.config.epochs * self.steps_per_epoch

    def lr(self) -> float:
        c = self.config
        return lr_at(self.step // self.steps_per_epoch, c.lr, c.lr_decay, c.decay_period)

    def train_step(self, batch: Optional[IdentityBatch] = None) -> Dict[str, float]:
        batch = batch if batch is not None else self.sampler.sample()
        lr = self.lr()
        self.model.train()
        self.optimizer.zero_grad()
        total, values = compute_losses(self.model, self.images, batch, self.config, self.class_index, step=self.step)
        total.backward()
        self.optimizer.step(lr)
        for params in self.model.hosg.values():
            # keep the pooling exponent in the valid range
            np.maximum(params.gem_p.data, 1.0, out=params.gem_p.data)
        self.step += 1
        row = {"step": self.step, "lr": lr, **values}
        self.trace.append(row)
        if self.step % self.steps_per_epoch == 0:
            logger.info("epoch %d step %d lr %.2g loss %.4f", self.step // self.steps_per_epoch,
                        self.step, lr, values["L_total"])
        return row

    def run(self, steps: Optional[int] = None) -> List[Dict[str, float]]:
        target = self.total_steps if steps is None else self.step + steps
        rows = []
        while self.step < target:
            rows.append(self.train_step())
        self.model.eval()
        return rows


def write_trace(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in rows:
            w.writerow([r["step"]] + [repr(float(r[c])) for c in TRACE_COLUMNS[1:]])
