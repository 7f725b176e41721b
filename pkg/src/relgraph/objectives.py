"""Training objectives: identity, hetero-center triplet, cross-correlation, local alignment."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping, Tuple

import numpy as np

from .hgam import pairwise_node_distances, shortest_path_distance, squash
from .tensormath import Tensor, ops

# added to masked-out distances so they never win a min/max
_MASK_OFFSET = 1e6


class BatchCompositionError(ValueError):
    """The batch lacks the identities/modalities a loss needs."""


class TrainingDivergenceError(ArithmeticError):
    """A loss component became non-finite."""

    def __init__(self, component: str, value: float, step=None):
        where = "" if step is None else f" at step {step}"
        super().__init__(f"loss component {component} is {value}{where}")
        self.component = component
        self.step = step


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.05
    beta: float = 2.0
    gamma: float = 1.0
    lambda_local: float = 1.0
    margin: float = 0.3
    local_margin: float = 0.3

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "lambda_local", "margin", "local_margin"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative, got {getattr(self, name)}")


def id_loss(logits: Tensor, labels) -> Tensor:
    return ops.softmax_cross_entropy(logits, labels)


def _modality_centers(features: Tensor, labels, modalities) -> Tuple[Tensor, Tensor, np.ndarray]:
    """Per-identity mean feature in each modality: (M, d) visible, (M, d) infrared."""
    labels = np.asarray(labels)
    modalities = np.asarray(modalities)
    if labels.shape[0] != features.shape[0] or modalities.shape[0] != features.shape[0]:
        raise BatchCompositionError(
            f"{features.shape[0]} features but {labels.shape[0]} labels and {modalities.shape[0]} modality tags"
        )
    ids = np.unique(labels)
    missing = []
    avg = {}
    for modality in ("vis", "ir"):
        weights = np.zeros((ids.size, labels.size), dtype=features.dtype)
        for row, pid in enumerate(ids):
            members = (labels == pid) & (modalities == modality)
            if not members.any():
                missing.append(f"{pid}:{modality}")
                continue
            weights[row, members] = 1.0 / members.sum()
        avg[modality] = weights
    if missing:
        raise BatchCompositionError(f"identities missing a modality: {', '.join(missing)}")
    return ops.matmul(Tensor(avg["vis"]), features), ops.matmul(Tensor(avg["ir"]), features), ids


def _pairwise_euclidean(a: Tensor, b: Tensor) -> Tensor:
    diff = ops.sub(ops.reshape(a, (a.shape[0], 1, a.shape[1])), ops.reshape(b, (1,) + b.shape))
    return ops.sqrt(ops.sum(ops.mul(diff, diff), axis=-1))


def hetero_center_triplet(features: Tensor, labels, modalities, margin: float = 0.3) -> Tensor:
    """Hinge on (visible-infrared center gap) minus (nearest other-identity center).

    Averaged over identities; needs at least two identities, each seen in
    both modalities.
    """
    cv, cr, ids = _modality_centers(features, labels, modalities)
    m = ids.size
    if m < 2:
        raise BatchCompositionError(f"hetero-center triplet needs >= 2 identities, got {m}")
    centers = ops.concat([cv, cr], axis=0)
    dist = _pairwise_euclidean(centers, centers)
    owner = np.concatenate([np.arange(m), np.arange(m)])
    same = (owner[:, None] == owner[None, :]).astype(features.dtype)
    positive = ops.index(dist, (np.arange(m), np.arange(m) + m))
    nearest = ops.min(ops.add(dist, Tensor(same * _MASK_OFFSET)), axis=1)
    nearest = ops.min(ops.stack([ops.index(nearest, slice(0, m)), ops.index(nearest, slice(m, 2 * m))], axis=0), axis=0)
    return ops.mean(ops.relu(ops.add(ops.sub(positive, nearest), margin)))


def cross_correlation(vis_centers: Tensor, ir_centers: Tensor) -> Tensor:
    """X[i, j] = <unit(vis_i), unit(ir_j)> over identities."""
    fv = ops.l2_normalize(vis_centers, axis=-1)
    fr = ops.l2_normalize(ir_centers, axis=-1)
    return ops.matmul(fv, ops.transpose(fr))


def cmcc_from_matrix(x: Tensor, alpha: float = 0.05) -> Tensor:
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ValueError(f"cross-correlation matrix must be square, got {x.shape}")
    eye = np.eye(x.shape[0], dtype=x.dtype)
    on_diag = ops.mul(ops.sub(1.0, x), Tensor(eye))
    off_diag = ops.mul(x, Tensor(1.0 - eye))
    return ops.add(ops.sum(ops.mul(on_diag, on_diag)), ops.mul(ops.sum(ops.mul(off_diag, off_diag)), alpha))


def cmcc_loss(features: Tensor, labels, modalities, alpha: float = 0.05) -> Tensor:
    """Drive the identity-indexed cross-modality correlation matrix toward I."""
    cv, cr, _ = _modality_centers(features, labels, modalities)
    return cmcc_from_matrix(cross_correlation(cv, cr), alpha)


def local_distance_matrix(vis_nodes: Tensor, ir_nodes: Tensor) -> Tensor:
    """Shortest-path local distance for every (visible, infrared) pair: (Bv, Br)."""
    a = ops.reshape(vis_nodes, (vis_nodes.shape[0], 1) + vis_nodes.shape[1:])
    b = ops.reshape(ir_nodes, (1,) + ir_nodes.shape)
    dist, _ = shortest_path_distance(squash(pairwise_node_distances(a, b)))
    return dist


def local_align_loss_from_distances(dist: Tensor, vis_labels, ir_labels, margin: float = 0.3) -> Tensor:
    vis_labels = np.asarray(vis_labels)
    ir_labels = np.asarray(ir_labels)
    same = vis_labels[:, None] == ir_labels[None, :]
    if not same.any(axis=1).all() or not same.any(axis=0).all():
        raise BatchCompositionError("every anchor needs a same-identity sample in the other modality")
    if same.all(axis=1).any() or same.all(axis=0).any():
        raise BatchCompositionError("every anchor needs a different-identity sample in the other modality")
    pos = same.astype(dist.dtype)
    hard_pos_src = ops.sub(dist, Tensor((1.0 - pos) * _MASK_OFFSET))
    hard_neg_src = ops.add(dist, Tensor(pos * _MASK_OFFSET))
    terms = []
    for axis in (1, 0):
        d_p = ops.max(hard_pos_src, axis=axis)
        d_n = ops.min(hard_neg_src, axis=axis)
        terms.append(ops.mean(ops.relu(ops.add(ops.sub(d_p, d_n), margin))))
    return ops.mul(ops.add(terms[0], terms[1]), 0.5)


def local_align_loss(vis_nodes: Tensor, vis_labels, ir_nodes: Tensor, ir_labels, margin: float = 0.3) -> Tensor:
    """Batch-hard triplet on local distances, visible anchors and infrared anchors averaged."""
    return local_align_loss_from_distances(local_distance_matrix(vis_nodes, ir_nodes), vis_labels, ir_labels, margin)


COMPONENTS = ("L_id", "L_tc", "L_cc", "L_local")


def total_loss(components: Mapping[str, Tensor], weights: LossWeights, step=None) -> Tuple[Tensor, Dict[str, float]]:
    """L_id + beta*L_tc + gamma*L_cc + lambda_local*L_local, plus each value as a float.

    Missing components count as zero.
    """
    scale = {"L_id": 1.0, "L_tc": weights.beta, "L_cc": weights.gamma, "L_local": weights.lambda_local}
    values: Dict[str, float] = {}
    total = None
    for name in COMPONENTS:
        term = components.get(name)
        if term is None:
            values[name] = 0.0
            continue
        value = float(np.asarray(term.data if isinstance(term, Tensor) else term).reshape(-1)[0])
        if not np.isfinite(value):
            raise TrainingDivergenceError(name, value, step)
        values[name] = value
        if scale[name] == 0.0:
            continue
        weighted = ops.mul(term, scale[name]) if isinstance(term, Tensor) else Tensor(np.asarray(term * scale[name]))
        total = weighted if total is None else ops.add(total, weighted)
    if total is None:
        total = Tensor(np.zeros(()))
    values["L_total"] = float(np.asarray(total.data).reshape(-1)[0])
    return total, values
