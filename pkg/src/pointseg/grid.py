"""Raster geometry: one-hot encoding, cropping, tiling and stitching.

Rasters are plain numpy arrays laid out ``(height, width, channels)`` in
C order, so ``raster.ravel()`` is exactly the on-disk payload order.
Label matrices are integer ``(height, width)`` arrays with 0 meaning
unlabeled.
"""
from __future__ import annotations

from typing import Iterable, NamedTuple

import numpy as np

from .errors import CoverageError, DomainError, GeometryError, ShapeError


class PatchSpec(NamedTuple):
    origin_row: int
    origin_col: int
    size: int

    def window(self) -> tuple[slice, slice]:
        return (slice(self.origin_row, self.origin_row + self.size),
                slice(self.origin_col, self.origin_col + self.size))


def one_hot(labels: np.ndarray, k: int) -> np.ndarray:
    """Encode a label matrix as a k-channel raster.

    Label ``c >= 1`` sets channel ``c - 1``; label 0 yields an all-zero row.
    """
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > k):
        raise DomainError(f"labels must lie in [0, {k}], got range "
                          f"[{labels.min()}, {labels.max()}]")
    out = np.zeros(labels.shape + (k,), dtype=np.float64)
    mask = labels > 0
    out[mask, labels[mask].astype(np.intp) - 1] = 1.0
    return out


def crop(raster: np.ndarray, spec: PatchSpec) -> np.ndarray:
    h, w = raster.shape[:2]
    r, c, s = spec
    if s < 1 or r < 0 or c < 0 or r + s > h or c + s > w:
        raise GeometryError(f"patch {tuple(spec)} does not fit in {h}x{w} raster")
    return raster[spec.window()].copy()


def _axis_origins(n: int, patch: int, stride: int) -> list[int]:
    # a step wider than the patch would skip pixels
    origins = list(range(0, n - patch + 1, min(stride, patch)))
    if origins[-1] + patch < n:
        origins.append(n - patch)
    return origins


def tile_positions(h: int, w: int, patch: int, stride: int) -> list[PatchSpec]:
    """Row-major tile origins covering an ``h x w`` image.

    The last tile along each axis is clamped so its far edge lands exactly
    on the image border.
    """
    if stride < 1:
        raise GeometryError(f"stride must be >= 1, got {stride}")
    if patch < 1 or patch > h or patch > w:
        raise GeometryError(f"patch {patch} does not fit in {h}x{w} image")
    rows = _axis_origins(h, patch, stride)
    cols = _axis_origins(w, patch, stride)
    return [PatchSpec(r, c, patch) for r in rows for c in cols]


def stitch(tiles: Iterable[tuple[PatchSpec, np.ndarray]], h: int, w: int, k: int) -> np.ndarray:
    """Average overlapping probability tiles into one ``h x w x k`` map."""
    acc = np.zeros((h, w, k), dtype=np.float64)
    count = np.zeros((h, w), dtype=np.int64)
    for spec, tile in tiles:
        tile = np.asarray(tile, dtype=np.float64)
        if tile.shape != (spec.size, spec.size, k):
            raise ShapeError(f"tile shape {tile.shape} does not match spec {tuple(spec)} with k={k}")
        if spec.origin_row < 0 or spec.origin_col < 0 or \
                spec.origin_row + spec.size > h or spec.origin_col + spec.size > w:
            raise GeometryError(f"tile {tuple(spec)} does not fit in {h}x{w} image")
        win = spec.window()
        acc[win] += tile
        count[win] += 1
    if (count == 0).any():
        r, c = np.argwhere(count == 0)[0]
        raise CoverageError(f"{int((count == 0).sum())} pixels uncovered, first at ({r}, {c})")
    acc /= count[..., None]
    acc /= acc.sum(axis=-1, keepdims=True)
    return acc


def argmax_labels(prob: np.ndarray) -> np.ndarray:
    """Per-pixel argmax as 1-based labels; ties go to the lowest class index."""
    return (np.argmax(prob, axis=-1) + 1).astype(np.int64)
