"""Input validation helpers for array-shaped data.

These are the single place where shape/finiteness/sign contracts are
enforced, so the estimator API and the functional modules reject bad
input with the same messages.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


def check_activation_batch(X, allow_negative: bool = False) -> np.ndarray:
    """Validate a batch of activation maps.

    Accepts an array-like of shape (n_samples, n_channels, k, k) with a
    square spatial grid, finite values, and (by default) no negative
    entries. Returns a float32 ndarray.
    """
    X = np.asarray(X, dtype=np.float32)
    if X.ndim != 4:
        raise ValidationError(
            f"activation batch must be 4-D (n_samples, n_channels, k, k), got shape {X.shape}"
        )
    if X.shape[2] != X.shape[3]:
        raise ValidationError(f"spatial grid must be square, got {X.shape[2]}x{X.shape[3]}")
    if min(X.shape) < 1:
        raise ValidationError(f"all dimensions must be >= 1, got shape {X.shape}")
    if not np.isfinite(X).all():
        idx = np.argwhere(~np.isfinite(X))[0]
        raise ValidationError(f"non-finite activation at (sample, channel, row, col)={tuple(idx)}")
    if not allow_negative and (X < 0).any():
        idx = np.argwhere(X < 0)[0]
        raise ValidationError(
            f"negative activation at (sample, channel, row, col)={tuple(idx)}; "
            "maps are expected to be post-ReLU (pass allow_negative to override)"
        )
    return X


def check_logit_batch(L, n_samples: int | None = None) -> np.ndarray:
    """Validate a batch of logit vectors of shape (n_samples, n_classes)."""
    L = np.asarray(L, dtype=np.float32)
    if L.ndim != 2:
        raise ValidationError(f"logit batch must be 2-D (n_samples, n_classes), got shape {L.shape}")
    if L.shape[1] < 2:
        raise ValidationError(f"need at least 2 classes, got {L.shape[1]}")
    if not np.isfinite(L).all():
        idx = np.argwhere(~np.isfinite(L))[0]
        raise ValidationError(f"non-finite logit at (sample, class)={tuple(idx)}")
    if n_samples is not None and L.shape[0] != n_samples:
        raise ValidationError(f"logit count {L.shape[0]} does not match sample count {n_samples}")
    return L


def check_head_arrays(weights, bias, n_channels: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Validate classifier-head arrays: weights (n_channels, n_classes), bias (n_classes,)."""
    W = np.asarray(weights, dtype=np.float32)
    b = np.asarray(bias, dtype=np.float32)
    if W.ndim != 2:
        raise ValidationError(f"head weights must be 2-D (n_channels, n_classes), got shape {W.shape}")
    if b.ndim != 1 or b.shape[0] != W.shape[1]:
        raise ValidationError(f"head bias shape {b.shape} does not match weights {W.shape}")
    if not (np.isfinite(W).all() and np.isfinite(b).all()):
        raise ValidationError("head contains non-finite values")
    if n_channels is not None and W.shape[0] != n_channels:
        raise ValidationError(f"head expects {W.shape[0]} channels, data has {n_channels}")
    return W, b


def check_score_vector(scores, name: str = "scores") -> np.ndarray:
    """Validate a non-empty 1-D vector of finite scores, returned as float64."""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValidationError(f"{name} must be a non-empty 1-D vector, got shape {s.shape}")
    if not np.isfinite(s).all():
        raise ValidationError(f"{name} contains non-finite values")
    return s
