"""Cross-modality retrieval evaluation: distances, CMC and mAP."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .objectives import local_distance_matrix
from .tensormath import Tensor

DIRECTIONS = {"v2i": ("vis", "ir"), "i2v": ("ir", "vis")}
MODES = ("global", "global+local")


class ProtocolError(ValueError):
    pass


@dataclass
class EvalReport:
    cmc: np.ndarray
    mAP: float
    ap: np.ndarray
    rank_lists: np.ndarray
    query_labels: Optional[np.ndarray] = None

    @property
    def rank1(self) -> float:
        return float(self.cmc[0])

    def write_csv(self, path, ranks_path=None) -> None:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("rank", "cmc"))
            for k, value in enumerate(self.cmc, start=1):
                w.writerow((k, repr(float(value))))
            w.writerow(("mAP", repr(float(self.mAP))))
        if ranks_path is None:
            ranks_path = path.with_name(path.stem + "_ranks.csv")
        with open(ranks_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("query", "identity", "ap", "ranked_gallery"))
            labels = self.query_labels if self.query_labels is not None else np.full(len(self.ap), -1)
            for q, (ap, ranks) in enumerate(zip(self.ap, self.rank_lists)):
                w.writerow((q, int(labels[q]), repr(float(ap)), " ".join(str(int(g)) for g in ranks)))


def _unit(x: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norm < 1e-12, 1.0, norm)


def distance_matrix(query, gallery, mode: str = "global", query_nodes=None, gallery_nodes=None,
                    local_weight: float = 1.0) -> np.ndarray:
    """Q x G distances between L2-normalised global features.

    ``global+local`` adds ``local_weight`` times the shortest-path local
    distance between the stored node graphs.
    """
    q = np.asarray(query, dtype=np.float64)
    g = np.asarray(gallery, dtype=np.float64)
    if q.ndim != 2 or g.ndim != 2 or q.shape[1] != g.shape[1]:
        raise ValueError(f"feature dimensions differ: query {q.shape}, gallery {g.shape}")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    qn, gn = _unit(q), _unit(g)
    sq = (qn * qn).sum(1)[:, None] + (gn * gn).sum(1)[None, :] - 2.0 * qn @ gn.T
    dist = np.sqrt(np.maximum(sq, 0.0))
    if mode == "global+local":
        if query_nodes is None or gallery_nodes is None:
            raise ValueError("global+local mode needs node graphs for queries and gallery")
        local = local_distance_matrix(Tensor(np.asarray(query_nodes, dtype=np.float64)),
                                      Tensor(np.asarray(gallery_nodes, dtype=np.float64))).data
        dist = dist + local_weight * local
    return dist


def cmc_map(dist, query_labels, gallery_labels) -> EvalReport:
    """Rank the gallery for each query (ascending distance, ties by index)."""
    dist = np.asarray(dist, dtype=np.float64)
    ql = np.asarray(query_labels)
    gl = np.asarray(gallery_labels)
    if dist.shape != (ql.size, gl.size):
        raise ValueError(f"distance matrix {dist.shape} does not match {ql.size} queries x {gl.size} gallery")
    absent = sorted({int(x) for x in ql} - {int(x) for x in gl})
    if absent:
        raise ProtocolError(f"query identities with no gallery match: {absent}")
    order = np.argsort(dist, axis=1, kind="stable")
    hits = gl[order] == ql[:, None]
    first = hits.argmax(axis=1)
    n_gallery = gl.size
    cmc = np.zeros(n_gallery)
    for f in first:
        cmc[f:] += 1
    cmc /= ql.size
    ap = np.zeros(ql.size)
    ranks = np.arange(1, n_gallery + 1)
    for q in range(ql.size):
        positions = ranks[hits[q]]
        ap[q] = np.mean(np.arange(1, positions.size + 1) / positions)
    return EvalReport(cmc=cmc, mAP=float(ap.mean()), ap=ap, rank_lists=order, query_labels=ql)


def run_protocol(manifest, model, direction: str = "v2i", mode: str = "global", local_weight: float = 1.0,
                 out_csv=None) -> EvalReport:
    """Embed the query and gallery splits with ``model`` and score them.

    ``model.embed(images, modality)`` must return (global features, nodes).
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {sorted(DIRECTIONS)}, got {direction!r}")
    q_mod, g_mod = DIRECTIONS[direction]
    q_set = manifest.select("query", q_mod)
    g_set = manifest.select("gallery", g_mod)
    if len(q_set) == 0 or len(g_set) == 0:
        raise ProtocolError(f"empty split: {len(q_set)} {q_mod} queries, {len(g_set)} {g_mod} gallery images")
    q_feat, q_nodes = model.embed(q_set.load_images(), q_mod)
    g_feat, g_nodes = model.embed(g_set.load_images(), g_mod)
    dist = distance_matrix(q_feat, g_feat, mode, q_nodes, g_nodes, local_weight)
    report = cmc_map(dist, q_set.labels, g_set.labels)
    if out_csv is not None:
        report.write_csv(out_csv)
    return report
