"""Seeded region growing of sparse point labels.

An unlabeled pixel joins class ``c`` when ``c`` is its argmax class under
the base head's probabilities (lowest index wins ties), that probability
is at least ``tau``, and it is 8-connected to a pixel already labeled
``c``. Growth repeats until nothing changes; labeled pixels are never
relabeled.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError, ShapeError

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class GrowParams:
    tau: float = 0.95

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau must lie in (0, 1], got {self.tau}")


def _tau(g) -> float:
    return g.tau if isinstance(g, GrowParams) else GrowParams(float(g)).tau


def init_expanded(y: np.ndarray) -> np.ndarray:
    return np.array(y, dtype=np.int64, copy=True)


def admissible_class(p_b: np.ndarray, tau: float) -> np.ndarray:
    """1-based argmax class where its probability reaches ``tau``, else 0."""
    arg = np.argmax(p_b, axis=-1)
    top = np.take_along_axis(p_b, arg[..., None], axis=-1)[..., 0]
    return np.where(top >= tau, arg + 1, 0)


def _check(E: np.ndarray, p_b: np.ndarray) -> None:
    if E.ndim != 2 or p_b.ndim != 3 or E.shape != p_b.shape[:2]:
        raise ShapeError(f"label matrix {E.shape} and probability map {p_b.shape} disagree")


def grow(E: np.ndarray, p_b: np.ndarray, g=GrowParams()) -> np.ndarray:
    """Fixed point of region growing from the labels in ``E``.

    Computed per class with connected components: a component of
    ``{seed c} | {unlabeled, admissible c}`` that holds a seed of class
    ``c`` is labeled ``c`` entirely.
    """
    E = np.asarray(E, dtype=np.int64)
    p_b = np.asarray(p_b, dtype=np.float64)
    _check(E, p_b)
    adm = admissible_class(p_b, _tau(g))
    out = E.copy()
    free = E == 0
    for c in np.unique(E[E > 0]):
        seeds = E == c
        comp, _ = ndimage.label(seeds | (free & (adm == c)), structure=_EIGHT)
        hit = np.unique(comp[seeds])
        out[free & np.isin(comp, hit)] = c
    return out


def grow_oracle(y: np.ndarray, p_b: np.ndarray, g=GrowParams()) -> np.ndarray:
    """Breadth-first flood per class; reference for :func:`grow`."""
    y = np.asarray(y, dtype=np.int64)
    p_b = np.asarray(p_b, dtype=np.float64)
    _check(y, p_b)
    tau = _tau(g)
    h, w, k = p_b.shape
    out = y.copy()
    for c in range(1, k + 1):
        queue = deque((r, col) for r in range(h) for col in range(w) if y[r, col] == c)
        seen = {rc for rc in queue}
        while queue:
            r, col = queue.popleft()
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    rr, cc = r + dr, col + dc
                    if (dr == dc == 0) or not (0 <= rr < h and 0 <= cc < w) or (rr, cc) in seen:
                        continue
                    if y[rr, cc] != 0:
                        continue
                    probs = [float(v) for v in p_b[rr, cc]]
                    best = max(range(k), key=lambda j: (probs[j], -j))
                    if best + 1 == c and probs[best] >= tau:
                        seen.add((rr, cc))
                        out[rr, cc] = c
                        queue.append((rr, cc))
    return out
