"""Training loop: point supervision, per-iteration region growing, two-head
consistency and a pseudo-label finetuning phase.

A dataset is a sequence of ``(image, points)`` pairs: ``image`` is
``(H, W, C)`` in [0, 1] and ``points`` a label matrix with 0 = unlabeled.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError, ScheduleError, TrainingDivergenceError
from .grid import PatchSpec, argmax_labels, crop
from .losses import (LossWeights, consistency_loss, full_loss, kl_consistency_loss,
                     lovasz_softmax, seg_loss)
from .model import ModelParams, forward, init_params, predict
from .regiongrow import GrowParams, grow, init_expanded

log = logging.getLogger(__name__)

MAX_SAMPLER_DRAWS = 1000


@dataclass
class TrainConfig:
    tau: float = 0.95
    lambda_con: float = 1.0
    base_lr: float = 1e-3
    weight_decay: float = 5e-5
    power: float = 0.9
    max_iter: int = 5000
    finetune_iter: int = 5000
    patch: int = 128
    batch: int = 64
    stride: int = 40
    k: int = 4
    seed: int = 0
    consistency_kind: str = "mse"
    temperature: float = 1.0
    enable_rg: bool = True
    enable_cr: bool = True
    enable_st: bool = True
    width: int = 32
    depth: int = 4
    in_channels: int = 3

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau must lie in (0, 1], got {self.tau}")
        for name in ("lambda_con", "base_lr", "weight_decay"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.power <= 0:
            raise ConfigError(f"power must be > 0, got {self.power}")
        if self.max_iter < 0 or self.finetune_iter < 0:
            raise ConfigError("iteration counts must be >= 0")
        if self.patch < 8:
            raise ConfigError(f"patch must be >= 8, got {self.patch}")
        if self.batch < 1 or self.stride < 1:
            raise ConfigError("batch and stride must be >= 1")
        if self.k < 2:
            raise ConfigError(f"k must be >= 2, got {self.k}")
        if self.consistency_kind not in ("mse", "kl"):
            raise ConfigError(f"consistency_kind must be 'mse' or 'kl', got {self.consistency_kind!r}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if self.width < 1 or self.depth < 1 or self.in_channels < 1:
            raise ConfigError("width, depth and in_channels must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        for key, value in data.items():
            expected = known[key].type
            if expected == "bool" and not isinstance(value, bool):
                raise ConfigError(f"config field {key!r} must be a boolean, got {value!r}")
            if expected == "int" and (isinstance(value, bool) or not isinstance(value, int)):
                raise ConfigError(f"config field {key!r} must be an integer, got {value!r}")
            if expected == "float" and (isinstance(value, bool) or not isinstance(value, (int, float))):
                raise ConfigError(f"config field {key!r} must be a number, got {value!r}")
            if expected == "str" and not isinstance(value, str):
                raise ConfigError(f"config field {key!r} must be a string, got {value!r}")
        return cls(**data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def prediction_heads(self) -> str:
        """Heads averaged at inference: the expanded head is only trained with consistency on."""
        return "both" if self.enable_cr else "base"


@dataclass
class TrainLogRecord:
    iter: int
    lr: float
    loss_seg: float
    loss_exp: float
    loss_con: float
    loss_total: float
    n_expanded: int
    n_points: int
    phase: str = "pretrain"


def poly_lr(iteration: int, cfg: TrainConfig, max_iter: int | None = None) -> float:
    max_iter = cfg.max_iter if max_iter is None else max_iter
    if iteration < 0 or iteration > max_iter:
        raise ScheduleError(f"iteration {iteration} outside [0, {max_iter}]")
    if max_iter == 0:
        return cfg.base_lr
    return cfg.base_lr * (1.0 - iteration / max_iter) ** cfg.power


def sgd_step(params: ModelParams, grads: dict[str, np.ndarray], lr: float,
             weight_decay: float) -> ModelParams:
    """Plain SGD; weight decay applies to weights only, not biases."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingDivergenceError(f"non-finite gradient for {name}")

    def update(name, p):
        g = grads[name]
        if name.endswith(".weight"):
            g = g + weight_decay * p
        return p - lr * g

    new = params.map(update)
    for name, p in new.named().items():
        if not np.isfinite(p).all():
            raise TrainingDivergenceError(f"parameter {name} became non-finite")
    return new


def _expand(points: np.ndarray, p_b: np.ndarray, tau: float) -> np.ndarray:
    g = GrowParams(tau)
    return np.stack([grow(init_expanded(y), p, g) for y, p in zip(points, p_b)])


def train_iteration(params: ModelParams, batch: tuple[np.ndarray, np.ndarray], cfg: TrainConfig,
                    iteration: int, *, expanded: np.ndarray | None = None,
                    schedule_len: int | None = None) -> tuple[ModelParams, TrainLogRecord]:
    """One SGD step on a batch ``(patches (B,P,P,C), points (B,P,P))``.

    ``expanded`` replaces region growing with fixed labels (used when
    finetuning on pseudo labels).
    """
    x, y = batch
    y = np.asarray(y, dtype=np.int64)
    if (y.reshape(len(y), -1) > 0).sum(axis=1).min() == 0:
        raise DataError("every patch in a batch needs at least one labeled point")
    tape = ad.Tape()
    logits_b, logits_e = forward(params, x, tape)
    p_b = ad.softmax(logits_b)
    seg = seg_loss(p_b, y)

    if expanded is not None:
        E = np.asarray(expanded, dtype=np.int64)
    elif cfg.enable_rg:
        E = _expand(y, p_b.value, cfg.tau)
    else:
        E = y

    exp_term = con_term = 0.0
    if cfg.enable_cr:
        p_e = ad.softmax(logits_e)
        exp_term = lovasz_softmax(p_e, E)
        if cfg.consistency_kind == "kl":
            con_term = kl_consistency_loss(p_b, p_e, cfg.temperature)
        else:
            con_term = consistency_loss(p_b, p_e)
    elif cfg.enable_rg or expanded is not None:
        exp_term = lovasz_softmax(p_b, E)
    total = full_loss(seg, exp_term, con_term, LossWeights(cfg.lambda_con))

    grads = ad.backward(tape, total)
    lr = poly_lr(iteration, cfg, schedule_len)
    new_params = sgd_step(params, grads, lr, cfg.weight_decay)

    def val(t):
        return t.item() if isinstance(t, ad.Tensor) else float(t)

    record = TrainLogRecord(
        iter=iteration, lr=lr, loss_seg=val(seg), loss_exp=val(exp_term),
        loss_con=val(con_term), loss_total=val(total),
        n_expanded=int((E > 0).sum()), n_points=int((y > 0).sum()),
    )
    if not np.isfinite([record.loss_seg, record.loss_exp, record.loss_con, record.loss_total]).all():
        raise TrainingDivergenceError(f"non-finite loss at iteration {iteration}")
    return new_params, record


class PatchSampler:
    """Random square crops that contain at least one annotated point."""

    def __init__(self, points: Sequence[np.ndarray], patch: int, rng: np.random.Generator):
        self.points = points
        self.patch = patch
        self.rng = rng
        for i, y in enumerate(points):
            if y.shape[0] < patch or y.shape[1] < patch:
                raise DataError(f"image {i} ({y.shape[0]}x{y.shape[1]}) is smaller than patch {patch}")

    def draw(self) -> tuple[int, PatchSpec]:
        for _ in range(MAX_SAMPLER_DRAWS):
            i = int(self.rng.integers(len(self.points)))
            h, w = self.points[i].shape
            spec = PatchSpec(int(self.rng.integers(h - self.patch + 1)),
                             int(self.rng.integers(w - self.patch + 1)), self.patch)
            if (self.points[i][spec.window()] > 0).any():
                return i, spec
        raise DataError(f"no patch with a labeled point found in {MAX_SAMPLER_DRAWS} draws")

    def batch(self, n: int) -> list[tuple[int, PatchSpec]]:
        return [self.draw() for _ in range(n)]


def _gather(images, points, picks, extra=None):
    x = np.stack([crop(images[i], s) for i, s in picks])
    y = np.stack([crop(points[i], s) for i, s in picks])
    e = None if extra is None else np.stack([crop(extra[i], s) for i, s in picks])
    return x, y, e


def _unpack(dataset) -> tuple[list[np.ndarray], list[np.ndarray]]:
    if len(dataset) == 0:
        raise DataError("dataset is empty")
    images = [np.asarray(img, dtype=np.float64) for img, _ in dataset]
    points = [np.asarray(y, dtype=np.int64) for _, y in dataset]
    for i, (img, y) in enumerate(zip(images, points)):
        if img.shape[:2] != y.shape:
            raise DataError(f"image {i} shape {img.shape} does not match its labels {y.shape}")
    return images, points


def pseudo_labels(params: ModelParams, image: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    """Dense argmax labels of the tiled, head-averaged prediction."""
    prob = predict(params, image, cfg.patch, cfg.stride, heads=cfg.prediction_heads)
    return argmax_labels(prob)


def finetune(params: ModelParams, dataset, cfg: TrainConfig, *,
             rng: np.random.Generator | None = None,
             on_record: Callable[[TrainLogRecord], None] | None = None
             ) -> tuple[ModelParams, list[TrainLogRecord]]:
    """Self-training: pseudo labels are computed once, then replace region growing."""
    if cfg.finetune_iter == 0:
        return params, []
    images, points = _unpack(dataset)
    pseudo = [pseudo_labels(params, img, cfg) for img in images]
    rng = rng if rng is not None else np.random.default_rng([cfg.seed, 2])
    sampler = PatchSampler(points, cfg.patch, rng)
    records = []
    for it in range(cfg.finetune_iter):
        x, y, e = _gather(images, points, sampler.batch(cfg.batch), pseudo)
        params, rec = train_iteration(params, (x, y), cfg, it, expanded=e,
                                      schedule_len=cfg.finetune_iter)
        rec.phase = "finetune"
        records.append(rec)
        if on_record:
            on_record(rec)
    return params, records


def train(cfg: TrainConfig, dataset, *,
          on_record: Callable[[TrainLogRecord], None] | None = None
          ) -> tuple[ModelParams, list[TrainLogRecord]]:
    """Full schedule: ``max_iter`` pre-training steps, then optional self-training."""
    images, points = _unpack(dataset)
    if images[0].shape[-1] != cfg.in_channels:
        raise DataError(f"images have {images[0].shape[-1]} channels, config says {cfg.in_channels}")
    params = init_params(cfg.seed, cfg.k, cfg.width, cfg.depth, cfg.in_channels)
    rng = np.random.default_rng([cfg.seed, 1])
    sampler = PatchSampler(points, cfg.patch, rng)
    records: list[TrainLogRecord] = []
    for it in range(cfg.max_iter):
        x, y, _ = _gather(images, points, sampler.batch(cfg.batch))
        params, rec = train_iteration(params, (x, y), cfg, it)
        records.append(rec)
        if on_record:
            on_record(rec)
        if it % 100 == 0:
            log.debug("iter %d loss %.4f expanded %d", it, rec.loss_total, rec.n_expanded)
    if cfg.enable_st:
        params, ft = finetune(params, list(zip(images, points)), cfg, on_record=on_record)
        records.extend(ft)
    return params, records
