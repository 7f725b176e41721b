"""Relational graph learning for visible-infrared person re-identification.

A small numpy autodiff engine drives a two-stream CNN whose part features
form per-modality graphs (one-vs-rest relations) that are aligned across
modalities by a monotone shortest-path distance.
"""

from .backbone import BackboneConfig, NodeGraph, TwoStreamBackbone, partition
from .dataio import Manifest, SyntheticSpec, generate, read_tensor, write_tensor
from .engine.config import TrainConfig, load_config, lr_at
from .engine.model import RelationalGraphNet
from .engine.trainer import Trainer
from .estimator import RelGraphReID
from .evalkit import EvalReport, cmc_map, distance_matrix, run_protocol
from .objectives import LossWeights

__version__ = "0.1.0"

__all__ = [
    "BackboneConfig",
    "EvalReport",
    "LossWeights",
    "Manifest",
    "NodeGraph",
    "RelGraphReID",
    "RelationalGraphNet",
    "SyntheticSpec",
    "TrainConfig",
    "Trainer",
    "TwoStreamBackbone",
    "cmc_map",
    "distance_matrix",
    "generate",
    "load_config",
    "lr_at",
    "partition",
    "read_tensor",
    "run_protocol",
    "write_tensor",
]
