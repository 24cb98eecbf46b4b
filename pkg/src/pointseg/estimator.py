"""scikit-learn compatible wrapper around the point-supervised trainer."""
from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import DataError, ShapeError
from .grid import argmax_labels
from .metrics import confusion, scores
from .model import predict
from .trainer import TrainConfig, train
from .validation import check_image, check_label_matrix


def _as_image_list(X, channels=None) -> list[np.ndarray]:
    if isinstance(X, np.ndarray) and X.ndim == 4:
        X = list(X)
    elif isinstance(X, np.ndarray) and X.ndim == 3 and channels is not None and X.shape[-1] == channels:
        X = [X]
    if len(X) == 0:
        raise DataError("no images given")
    return [check_image(x, channels=channels) for x in X]


def _maybe_stack(arrays: list[np.ndarray]):
    if len({a.shape for a in arrays}) == 1:
        return np.stack(arrays)
    return arrays


class PointSupervisedSegmenter(BaseEstimator):
    """Segment rasters after training on sparse point annotations.

    ``fit(X, y)`` takes images ``X`` (``(n, H, W, C)`` or a list of
    ``(H, W, C)`` arrays with values in [0, 1]) and point label matrices
    ``y`` (0 = unlabeled, classes ``1..k``). ``predict`` returns dense
    label maps in ``1..k``.

    The three ``enable_*`` switches select the region-growing,
    consistency and self-training components; with all three off the
    model is trained on the points alone.
    """

    def __init__(self, k=4, tau=0.95, lambda_con=1.0, base_lr=1e-3, weight_decay=5e-5, power=0.9,
                 max_iter=5000, finetune_iter=5000, patch=128, batch=64, stride=40, seed=0,
                 consistency_kind="mse", temperature=1.0, enable_rg=True, enable_cr=True,
                 enable_st=True, width=32, depth=4):
        self.k = k
        self.tau = tau
        self.lambda_con = lambda_con
        self.base_lr = base_lr
        self.weight_decay = weight_decay
        self.power = power
        self.max_iter = max_iter
        self.finetune_iter = finetune_iter
        self.patch = patch
        self.batch = batch
        self.stride = stride
        self.seed = seed
        self.consistency_kind = consistency_kind
        self.temperature = temperature
        self.enable_rg = enable_rg
        self.enable_cr = enable_cr
        self.enable_st = enable_st
        self.width = width
        self.depth = depth

    def _config(self, in_channels: int) -> TrainConfig:
        names = {f.name for f in dataclasses.fields(TrainConfig)} - {"in_channels"}
        return TrainConfig(in_channels=in_channels, **{n: getattr(self, n) for n in names})

    def fit(self, X, y):
        images = _as_image_list(X)
        labels = [check_label_matrix(t, self.k) for t in (list(y) if not isinstance(y, list) else y)]
        if len(images) != len(labels):
            raise ShapeError(f"{len(images)} images but {len(labels)} label matrices")
        for img, lab in zip(images, labels):
            if img.shape[:2] != lab.shape:
                raise ShapeError(f"image {img.shape} and labels {lab.shape} disagree")
        self.n_features_in_ = images[0].shape[-1]
        self.config_ = self._config(self.n_features_in_)
        self.params_, self.training_log_ = train(self.config_, list(zip(images, labels)))
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        images = _as_image_list(X, channels=self.n_features_in_)
        heads = self.config_.prediction_heads
        return _maybe_stack([predict(self.params_, img, self.patch, self.stride, heads=heads)
                             for img in images])

    def predict(self, X):
        proba = self.predict_proba(X)
        return _maybe_stack([argmax_labels(p) for p in proba])

    def score(self, X, y) -> float:
        """Mean F1 of the pooled confusion matrix against dense labels (0 ignored)."""
        preds = self.predict(X)
        cm = sum(confusion(p, check_label_matrix(t, self.k), self.k) for p, t in zip(preds, y))
        return scores(cm).mf1
