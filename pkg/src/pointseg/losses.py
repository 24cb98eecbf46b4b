"""Training objectives.

Probability maps are ``(..., k)`` tensors whose leading axes match the
label matrix (a single ``(H, W)`` patch or a ``(B, H, W)`` batch). Every
labeled pixel of the batch is pooled before averaging. Label 0 is never
supervised.

Each loss accepts either an :class:`~pointseg.autodiff.Tensor` already on
a tape or a plain array (wrapped as a constant on a fresh tape) and
returns a scalar tensor.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DomainError, EmptySupervisionError, ShapeError

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    lambda_con: float = 1.0

    def __post_init__(self):
        if self.lambda_con < 0:
            raise ConfigError(f"lambda_con must be >= 0, got {self.lambda_con}")


def _as_tensor(p) -> ad.Tensor:
    if isinstance(p, ad.Tensor):
        return p
    return ad.Tape().constant(np.asarray(p, dtype=np.float64))


def _labels_for(p: ad.Tensor, labels) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != p.shape[:-1]:
        raise ShapeError(f"labels {labels.shape} do not match probability map {p.shape}")
    k = p.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() > k):
        raise DomainError(f"labels must lie in [0, {k}]")
    return labels


def seg_loss(p_b, y) -> ad.Tensor:
    """Mean negative log-probability of the annotated class over labeled pixels."""
    p = _as_tensor(p_b)
    y = _labels_for(p, y).ravel()
    k = p.shape[-1]
    pos = np.flatnonzero(y)
    if pos.size == 0:
        raise EmptySupervisionError("seg_loss needs at least one labeled pixel")
    picked = ad.gather(p, pos * k + (y[pos] - 1))
    return ad.scale(ad.mean(ad.log(picked, floor=LOG_FLOOR)), -1.0)


def jaccard_index(pred, target, c: int) -> float:
    a = np.asarray(pred) == c
    b = np.asarray(target) == c
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def error_tensor(p_e, E) -> ad.Tensor:
    """Per-class prediction errors: ``1 - p`` on the labeled class, ``p`` elsewhere.

    Rows of unlabeled pixels are zero.
    """
    p = _as_tensor(p_e)
    E = _labels_for(p, E)
    k = p.shape[-1]
    onehot = np.zeros(p.shape)
    mask = E > 0
    onehot[mask, E[mask] - 1] = 1.0
    sign = (1.0 - 2.0 * onehot) * mask[..., None]
    return ad.add(ad.mul(p, sign), onehot)


def lovasz_grad(gt_sorted: np.ndarray) -> np.ndarray:
    """Increments of the Jaccard loss along a sorted ground-truth indicator."""
    gt_sorted = np.asarray(gt_sorted, dtype=np.float64)
    gts = gt_sorted.sum()
    intersection = gts - np.cumsum(gt_sorted)
    union = gts + np.cumsum(1.0 - gt_sorted)
    jac = 1.0 - intersection / union
    jac[1:] = jac[1:] - jac[:-1]
    return jac


def lovasz_softmax(p_e, E) -> ad.Tensor:
    """Lovasz extension of the per-class Jaccard loss, averaged over classes present in ``E``."""
    p = _as_tensor(p_e)
    E = _labels_for(p, E).ravel()
    k = p.shape[-1]
    pos = np.flatnonzero(E)
    if pos.size == 0:
        raise EmptySupervisionError("lovasz_softmax needs at least one labeled pixel")
    M = error_tensor(p, E.reshape(p.shape[:-1]))
    lab = E[pos]
    terms = []
    for c in np.unique(lab):
        errors, perm = ad.sort_desc(ad.gather(M, pos * k + (c - 1)))
        g = lovasz_grad(lab[perm] == c)
        terms.append(ad.sum(ad.mul(errors, g)))
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.scale(total, 1.0 / len(terms))


def _n_pixels(p: ad.Tensor) -> int:
    return int(np.prod(p.shape[:-1]))


def _pair(a, b) -> tuple[ad.Tensor, ad.Tensor]:
    tape = next((t.tape for t in (a, b) if isinstance(t, ad.Tensor)), None) or ad.Tape()
    a, b = (t if isinstance(t, ad.Tensor) else tape.constant(np.asarray(t, dtype=np.float64))
            for t in (a, b))
    if a.shape != b.shape:
        raise ShapeError(f"probability maps disagree: {a.shape} vs {b.shape}")
    return a, b


def consistency_loss(p_b, p_e) -> ad.Tensor:
    """Per-pixel squared distance between the two heads' maps, averaged over pixels."""
    pb, pe = _pair(p_b, p_e)
    return ad.scale(ad.sum(ad.square(ad.sub(pb, pe))), 1.0 / _n_pixels(pb))


def kl_consistency_loss(p_b, p_e, temperature: float = 1.0) -> ad.Tensor:
    """Mean per-pixel KL(soft(p_b) || soft(p_e)).

    ``soft`` re-applies a softmax to the log-probabilities divided by the
    temperature.
    """
    if not temperature > 0:
        raise DomainError(f"temperature must be > 0, got {temperature}")
    pb, pe = _pair(p_b, p_e)
    zb = ad.scale(ad.log(pb, floor=LOG_FLOOR), 1.0 / temperature)
    ze = ad.scale(ad.log(pe, floor=LOG_FLOOR), 1.0 / temperature)
    log_ratio = ad.sub(ad.log_softmax(zb), ad.log_softmax(ze))
    return ad.scale(ad.sum(ad.mul(ad.softmax(zb), log_ratio)), 1.0 / _n_pixels(pb))


def full_loss(seg, exp, con, w: LossWeights = LossWeights()):
    """``seg + exp + lambda_con * con``; works on tensors or floats."""
    if isinstance(con, ad.Tensor):
        weighted = ad.scale(con, w.lambda_con)
    else:
        weighted = w.lambda_con * con
    return seg + exp + weighted
