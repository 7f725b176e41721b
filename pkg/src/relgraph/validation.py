"""Input checks shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .backbone import MODALITIES


def check_images(X, input_shape=None) -> np.ndarray:
    """Validate a stack of images (n, C, H, W) and return it as float32."""
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=np.float32, ensure_min_samples=1)
    if X.ndim != 4:
        raise ValueError(f"expected images of shape (n, C, H, W), got array with shape {X.shape}")
    if input_shape is not None and tuple(X.shape[1:]) != tuple(input_shape):
        raise ValueError(f"expected images of shape (n, {', '.join(map(str, input_shape))}), got {X.shape}")
    return X


def check_modalities(modality, n: int) -> np.ndarray:
    """Broadcast a single tag or validate one tag per sample."""
    if isinstance(modality, str):
        modality = [modality] * n
    tags = np.asarray(modality)
    if tags.shape != (n,):
        raise ValueError(f"expected {n} modality tags, got shape {tags.shape}")
    bad = sorted(set(tags.tolist()) - set(MODALITIES))
    if bad:
        raise ValueError(f"unknown modality tags {bad}; expected {MODALITIES}")
    return tags


def check_labels(y, n: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("identity labels must be integers")
        y = y.astype(np.int64)
    return y
