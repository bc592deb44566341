"""Input checks shared by the estimators."""

from __future__ import annotations

import numpy as np


def check_sequence_batch(X, seq_len=None, size=None, dtype=np.float64) -> np.ndarray:
    """Validate an (n, T, H, W, 3) batch of sequences scaled to [0, 1]."""
    X = np.asarray(X, dtype=dtype)
    if X.ndim == 4:
        X = X[None]
    if X.ndim != 5 or X.shape[-1] != 3:
        raise ValueError(f"expected sequences of shape (n, T, H, W, 3), got {X.shape}")
    if seq_len is not None and X.shape[1] != seq_len:
        raise ValueError(f"expected {seq_len} frames per sequence, got {X.shape[1]}")
    if size is not None and X.shape[2:4] != (size, size):
        raise ValueError(f"expected {size}x{size} frames, got {X.shape[2]}x{X.shape[3]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("input contains NaN or infinity")
    return X


def check_mosaic_batch(X) -> np.ndarray:
    """Validate uint8-range Bayer mosaics with a (..., H, W) layout and even H, W."""
    X = np.asarray(X)
    if X.ndim < 2:
        raise ValueError(f"expected at least a 2-D mosaic, got shape {X.shape}")
    if X.shape[-1] % 2 or X.shape[-2] % 2:
        raise ValueError(f"mosaic dimensions {X.shape[-2:]} must be even")
    if X.size and (X.min() < 0 or X.max() > 255):
        raise ValueError("mosaic values must lie in [0, 255]")
    return X.astype(np.uint8)


def check_binary_labels(y):
    """Return (classes, encoded) with the spoof-like class encoded as 1."""
    y = np.asarray(y)
    classes = np.unique(y)
    if len(classes) != 2:
        raise ValueError(f"need exactly two classes, got {classes.tolist()}")
    return classes, (y == classes[1]).astype(int)
