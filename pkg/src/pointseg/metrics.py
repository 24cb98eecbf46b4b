"""Confusion-matrix based segmentation scores."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError


def confusion(pred, gt, k: int) -> np.ndarray:
    """``k x k`` counts, rows = ground truth, columns = prediction; gt 0 is ignored."""
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    keep = gt > 0
    p, g = pred[keep], gt[keep]
    if p.size and (p.min() < 1 or p.max() > k):
        raise DomainError(f"predicted labels must lie in [1, {k}]")
    if g.size and g.max() > k:
        raise DomainError(f"ground-truth labels must lie in [0, {k}]")
    return np.bincount((g - 1) * k + (p - 1), minlength=k * k).reshape(k, k)


@dataclass
class Scores:
    f1: np.ndarray        # per class, NaN where the class is absent
    iou: np.ndarray
    mf1: float
    miou: float
    oa: float
    present: np.ndarray   # boolean mask of classes included in the means

    @property
    def excluded(self) -> list[int]:
        return [int(c) + 1 for c in np.flatnonzero(~self.present)]

    def summary(self) -> dict:
        return {
            "mF1": self.mf1, "mIoU": self.miou, "OA": self.oa,
            "f1": [None if np.isnan(v) else float(v) for v in self.f1],
            "iou": [None if np.isnan(v) else float(v) for v in self.iou],
            "excluded_classes": self.excluded,
        }


def scores(cm) -> Scores:
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    if total <= 0:
        raise DomainError("confusion matrix is empty")
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = tp + fp + fn
    present = denom > 0
    f1 = np.full(len(tp), np.nan)
    iou = np.full(len(tp), np.nan)
    f1[present] = 2 * tp[present] / (2 * tp[present] + fp[present] + fn[present])
    iou[present] = tp[present] / denom[present]
    return Scores(f1=f1, iou=iou, mf1=float(f1[present].mean()), miou=float(iou[present].mean()),
                  oa=float(tp.sum() / total), present=present)


def scores_csv(s: Scores, class_names: list[str] | None = None) -> str:
    """One row per included class plus a trailing summary row."""
    names = class_names or [f"class_{c + 1}" for c in range(len(s.f1))]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["name", "f1", "iou", "oa"])
    for c in np.flatnonzero(s.present):
        writer.writerow([names[c], repr(float(s.f1[c])), repr(float(s.iou[c])), ""])
    writer.writerow(["mean", repr(s.mf1), repr(s.miou), repr(s.oa)])
    return buf.getvalue()
