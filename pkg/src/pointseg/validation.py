"""Input validation helpers shared by the functional API and the estimator."""
from __future__ import annotations

import numpy as np

from .errors import DomainError, ShapeError


def check_image(image, *, channels: int | None = None, batched: bool = False) -> np.ndarray:
    """Return ``image`` as a float64 ``(H, W, C)`` (or ``(B, H, W, C)``) array."""
    arr = np.asarray(image, dtype=np.float64)
    ndim = 4 if batched else 3
    if arr.ndim == ndim - 1:
        arr = arr[..., None]
    if arr.ndim != ndim:
        raise ShapeError(f"expected a {ndim}-d image array, got shape {arr.shape}")
    if channels is not None and arr.shape[-1] != channels:
        raise ShapeError(f"expected {channels} channels, got {arr.shape[-1]}")
    if not np.isfinite(arr).all():
        raise DomainError("image contains NaN or Inf")
    return arr


def check_label_matrix(labels, k: int | None = None, *, allow_zero: bool = True) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.ndim < 2:
        raise ShapeError(f"label matrix must be at least 2-d, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.mod(arr, 1) == 0):
            raise DomainError("label matrix must hold integers")
    arr = arr.astype(np.int64)
    lo = 0 if allow_zero else 1
    if arr.size and arr.min() < lo:
        raise DomainError(f"labels must be >= {lo}")
    if k is not None and arr.size and arr.max() > k:
        raise DomainError(f"label {arr.max()} exceeds k={k}")
    return arr


def check_probability_raster(prob, *, atol: float = 1e-5) -> np.ndarray:
    arr = np.asarray(prob, dtype=np.float64)
    if arr.ndim < 2:
        raise ShapeError(f"probability raster needs a channel axis, got shape {arr.shape}")
    if arr.size and (arr.min() < -atol or arr.max() > 1 + atol):
        raise DomainError("probabilities must lie in [0, 1]")
    if not np.allclose(arr.sum(axis=-1), 1.0, rtol=0.0, atol=atol):
        raise DomainError("probability channels must sum to 1")
    return arr


def check_same_geometry(labels: np.ndarray, raster: np.ndarray) -> None:
    if labels.shape != raster.shape[:-1]:
        raise ShapeError(f"label matrix shape {labels.shape} does not match "
                         f"raster geometry {raster.shape[:-1]}")
