"""Input validation helpers shared by the estimators and the functional core."""

import numpy as np

from .exceptions import DomainError, ShapeError


def as_image(pixels) -> np.ndarray:
    """Coerce to a float64 H x W x C array.

    2-D input is treated as single channel. Values must be finite.
    """
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ShapeError(f"image must be HxW or HxWxC, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ShapeError(f"image dimensions must all be >= 1, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("image contains non-finite values")
    return arr


def as_vector(values) -> np.ndarray:
    """Coerce to a finite 1-D float64 vector of length >= 1."""
    vec = np.asarray(values, dtype=np.float64).ravel()
    if vec.size < 1:
        raise ShapeError("embedding vector must have at least one component")
    if not np.all(np.isfinite(vec)):
        raise DomainError("embedding vector contains non-finite values")
    return vec


def check_same_hw(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape[:2] != b.shape[:2]:
        raise ShapeError(f"{what}: {a.shape[:2]} does not match {b.shape[:2]}")


def as_baseline(baseline, n_channels: int) -> np.ndarray:
    """Broadcast a scalar or per-channel baseline to shape (C,)."""
    arr = np.asarray(baseline, dtype=np.float64).ravel()
    if arr.size == 1:
        arr = np.full(n_channels, arr[0])
    if arr.size != n_channels:
        raise ShapeError(
            f"baseline has {arr.size} channels, image has {n_channels}"
        )
    return arr
