"""Scikit-learn style estimator around the relational-graph network."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .engine.config import TrainConfig
from .engine.trainer import Trainer
from .validation import check_images, check_labels, check_modalities


class RelGraphReID(TransformerMixin, BaseEstimator):
    """Cross-modality re-identification embedder.

    ``fit`` trains on images of both modalities; ``transform`` maps images
    of one modality to global graph features for retrieval; ``predict``
    returns the training identity with the highest classifier score.

    Parameters mirror :class:`relgraph.engine.config.TrainConfig`;
    ``random_state`` is its ``seed``.
    """

    def __init__(self, alpha=0.05, beta=2.0, gamma=1.0, lambda_local=1.0, margin=0.3, local_margin=0.3,
                 lr=0.01, momentum=0.9, weight_decay=5e-4, lr_decay=0.1, decay_period=10, epochs=30,
                 steps_per_epoch=0, P=4, K_vis=4, K_ir=4, input_shape=(3, 48, 24), stem_channels=(8,),
                 stem_stride=2, body_channels=(16, 32), body_strides=(2, 1), num_nodes=6, feat_dim=32,
                 gem_p=3.0, bn_momentum=0.1, bn_eps=1e-5, align_normalize=True, eval_local_weight=1.0,
                 random_state=0):
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.lambda_local = lambda_local
        self.margin = margin
        self.local_margin = local_margin
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.lr_decay = lr_decay
        self.decay_period = decay_period
        self.epochs = epochs
        self.steps_per_epoch = steps_per_epoch
        self.P = P
        self.K_vis = K_vis
        self.K_ir = K_ir
        self.input_shape = input_shape
        self.stem_channels = stem_channels
        self.stem_stride = stem_stride
        self.body_channels = body_channels
        self.body_strides = body_strides
        self.num_nodes = num_nodes
        self.feat_dim = feat_dim
        self.gem_p = gem_p
        self.bn_momentum = bn_momentum
        self.bn_eps = bn_eps
        self.align_normalize = align_normalize
        self.eval_local_weight = eval_local_weight
        self.random_state = random_state

    # -- config bridge ----------------------------------------------------
    def to_config(self, manifest: str = "") -> TrainConfig:
        params = self.get_params()
        seed = params.pop("random_state")
        seed = 0 if seed is None else int(seed)
        for key in ("input_shape", "stem_channels", "body_channels", "body_strides"):
            params[key] = tuple(params[key])
        return TrainConfig(seed=seed, manifest=manifest, **params)

    @classmethod
    def from_config(cls, config: TrainConfig) -> "RelGraphReID":
        params = config.to_dict()
        params.pop("manifest")
        params["random_state"] = params.pop("seed")
        return cls(**params)

    # -- estimator API ----------------------------------------------------
    def fit(self, X, y, modality=None):
        """Train on images ``X`` (n, C, H, W) with identities ``y`` and per-sample modality tags."""
        if modality is None:
            raise ValueError("fit needs a modality tag ('vis' or 'ir') for every sample")
        config = self.to_config()
        X = check_images(X, config.input_shape)
        y = check_labels(y, X.shape[0])
        tags = check_modalities(modality, X.shape[0])
        trainer = Trainer(config, X, y, tags)
        trainer.run()
        self._set_fitted(trainer.model, trainer.classes, trainer.trace)
        self.trainer_ = trainer
        return self

    def _set_fitted(self, model, classes, trace=()):
        self.model_ = model
        self.classes_ = np.asarray(classes)
        self.trace_ = list(trace)
        self.n_features_out_ = model.config.feat_dim
        return self

    def embed(self, X, modality: str = "vis"):
        """(global features (n, d), alignment nodes (n, N, d)) for one modality."""
        check_is_fitted(self, "model_")
        X = check_images(X, self.model_.config.input_shape)
        check_modalities(modality, 1)
        return self.model_.embed(X, modality)

    def transform(self, X, modality: str = "vis") -> np.ndarray:
        return self.embed(X, modality)[0]

    def fit_transform(self, X, y=None, modality=None, **fit_params):
        self.fit(X, y, modality=modality)
        tags = check_modalities(modality, len(X))
        out = np.zeros((len(X), self.n_features_out_), dtype=np.float32)
        for m in ("vis", "ir"):
            mask = tags == m
            if mask.any():
                out[mask] = self.transform(np.asarray(X)[mask], m)
        return out

    def decision_function(self, X, modality: str = "vis") -> np.ndarray:
        return self.model_.logits(self.transform(X, modality))

    def predict(self, X, modality: str = "vis") -> np.ndarray:
        return self.classes_[np.argmax(self.decision_function(X, modality), axis=1)]
