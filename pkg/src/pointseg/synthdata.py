"""Synthetic multi-class raster scenes with dense ground truth and point labels."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, GenerationError

MAX_PLACEMENT_TRIES = 50


@dataclass(frozen=True)
class SceneSpec:
    height: int = 64
    width: int = 64
    k: int = 4
    n_regions: int = 8
    noise_sigma: float = 0.25
    seed: int = 0
    background_ignore: bool = False

    def __post_init__(self):
        if self.k < 2:
            raise ConfigError(f"k must be >= 2, got {self.k}")
        if self.height < 8 or self.width < 8:
            raise ConfigError(f"scene must be at least 8x8, got {self.height}x{self.width}")
        if self.n_regions < self.k:
            raise ConfigError(f"n_regions ({self.n_regions}) must be >= k ({self.k})")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


def class_colors(k: int) -> np.ndarray:
    """Fixed RGB mean color per class, spread around a hue circle."""
    angle = 2 * np.pi * np.arange(k)[:, None] / k
    phase = 2 * np.pi * np.arange(3)[None, :] / 3
    return 0.5 + 0.3 * np.cos(angle + phase)


def _rectangle(rng, h, w):
    rh = rng.integers(max(2, h // 8), max(3, h // 3) + 1)
    rw = rng.integers(max(2, w // 8), max(3, w // 3) + 1)
    r0 = rng.integers(0, h - rh + 1)
    c0 = rng.integers(0, w - rw + 1)
    mask = np.zeros((h, w), dtype=bool)
    mask[r0:r0 + rh, c0:c0 + rw] = True
    return mask


def _ellipse(rng, h, w):
    cy, cx = rng.uniform(0, h), rng.uniform(0, w)
    a = rng.uniform(max(1.5, h / 14), max(2.0, h / 5))
    b = rng.uniform(max(1.5, w / 14), max(2.0, w / 5))
    theta = rng.uniform(0, np.pi)
    rr, cc = np.mgrid[0:h, 0:w]
    dy, dx = rr - cy, cc - cx
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    return (u / b) ** 2 + (v / a) ** 2 <= 1.0


def gen_scene(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(image, dense_gt)``; image is ``(H, W, 3)`` float64 in [0, 1].

    Class 1 is the background. Shapes are painted in order, later ones
    occluding earlier ones, until every class covers at least one pixel.
    """
    h, w, k = spec.height, spec.width, spec.k
    rng = np.random.default_rng(spec.seed)
    for _ in range(MAX_PLACEMENT_TRIES):
        gt = np.ones((h, w), dtype=np.int64)
        classes = list(rng.permutation(np.arange(2, k + 1)))
        classes += list(rng.integers(2, k + 1, size=spec.n_regions - len(classes)))
        for c in rng.permutation(classes):
            shape = _rectangle if rng.random() < 0.5 else _ellipse
            gt[shape(rng, h, w)] = c
        if len(np.unique(gt)) == k:
            break
    else:
        raise GenerationError(f"could not place all {k} classes in {MAX_PLACEMENT_TRIES} tries")
    image = class_colors(k)[gt - 1] + rng.normal(0.0, spec.noise_sigma, size=(h, w, 3))
    image = np.clip(image, 0.0, 1.0)
    if spec.background_ignore:
        gt = np.where(gt == 1, 0, gt)
    return image, gt


def sample_points(dense_gt, points_per_class: int, seed: int) -> np.ndarray:
    """Keep up to ``points_per_class`` random pixels of each present class."""
    if points_per_class < 1:
        raise ConfigError(f"points_per_class must be >= 1, got {points_per_class}")
    gt = np.asarray(dense_gt, dtype=np.int64)
    rng = np.random.default_rng(seed)
    flat = gt.ravel()
    out = np.zeros_like(flat)
    for c in np.unique(flat[flat > 0]):
        support = np.flatnonzero(flat == c)
        take = rng.choice(support, size=min(points_per_class, support.size), replace=False)
        out[take] = c
    return out.reshape(gt.shape)


def make_dataset(n: int, spec: SceneSpec, points_per_class: int = 5, seed_offset: int = 0):
    """``n`` scenes with seeds ``spec.seed + seed_offset + i``.

    Returns lists ``images, dense_gts, points``.
    """
    images, gts, points = [], [], []
    for i in range(n):
        s = spec.seed + seed_offset + i
        image, gt = gen_scene(replace(spec, seed=s))
        images.append(image)
        gts.append(gt)
        points.append(sample_points(gt, points_per_class, seed=s + 7919))
    return images, gts, points
