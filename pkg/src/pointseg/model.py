"""Two-head fully convolutional segmentation network.

A stack of stride-1 3x3 conv + ReLU layers is shared by two 1x1 conv
classifier heads: the base head, trained on the sparse points, and the
expanded head, trained on region-grown labels.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError
from .grid import crop, stitch, tile_positions

Layer = tuple[np.ndarray, np.ndarray]


@dataclass
class ModelParams:
    backbone: list[Layer]
    head_b: Layer
    head_e: Layer
    in_channels: int = field(init=False)

    def __post_init__(self):
        self.in_channels = self.backbone[0][0].shape[2]

    @property
    def k(self) -> int:
        return self.head_b[0].shape[-1]

    def named(self) -> dict[str, np.ndarray]:
        """Flat name -> array view, in a fixed order."""
        out = {}
        for i, (w, b) in enumerate(self.backbone):
            out[f"backbone.{i}.weight"] = w
            out[f"backbone.{i}.bias"] = b
        out["head_b.weight"], out["head_b.bias"] = self.head_b
        out["head_e.weight"], out["head_e.bias"] = self.head_e
        return out

    @classmethod
    def from_named(cls, tensors: dict[str, np.ndarray]) -> "ModelParams":
        depth = 0
        while f"backbone.{depth}.weight" in tensors:
            depth += 1
        if depth == 0:
            raise ShapeError("no backbone layers found")
        try:
            backbone = [(np.asarray(tensors[f"backbone.{i}.weight"], dtype=np.float64),
                         np.asarray(tensors[f"backbone.{i}.bias"], dtype=np.float64))
                        for i in range(depth)]
            head_b = (np.asarray(tensors["head_b.weight"], dtype=np.float64),
                      np.asarray(tensors["head_b.bias"], dtype=np.float64))
            head_e = (np.asarray(tensors["head_e.weight"], dtype=np.float64),
                      np.asarray(tensors["head_e.bias"], dtype=np.float64))
        except KeyError as exc:
            raise ShapeError(f"missing parameter tensor {exc}") from None
        return cls(backbone, head_b, head_e)

    def map(self, fn) -> "ModelParams":
        """Apply ``fn(name, array) -> array`` to every tensor."""
        named = {name: fn(name, arr) for name, arr in self.named().items()}
        return ModelParams.from_named(named)

    def copy(self) -> "ModelParams":
        return self.map(lambda _, a: a.copy())


def init_params(seed: int, k: int, width: int = 32, depth: int = 4, in_channels: int = 3) -> ModelParams:
    """Gaussian weights with std ``1/sqrt(fan_in)``, zero biases."""
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    if depth < 1 or width < 1:
        raise ConfigError(f"depth and width must be >= 1, got depth={depth}, width={width}")
    rng = np.random.default_rng(seed)
    backbone = []
    cin = in_channels
    for _ in range(depth):
        fan_in = 9 * cin
        backbone.append((rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(3, 3, cin, width)),
                         np.zeros(width)))
        cin = width
    heads = [(rng.normal(0.0, 1.0 / np.sqrt(width), size=(1, 1, width, k)), np.zeros(k))
             for _ in range(2)]
    return ModelParams(backbone, heads[0], heads[1])


def forward(params: ModelParams, patch: np.ndarray, tape: ad.Tape,
            prefix: str = "") -> tuple[ad.Tensor, ad.Tensor]:
    """Logits of both heads for ``patch`` (``(H,W,C)`` or ``(B,H,W,C)``).

    Each parameter is registered on ``tape`` under its ``named()`` key, so
    :func:`pointseg.autodiff.backward` returns gradients keyed the same way.
    """
    patch = np.asarray(patch, dtype=np.float64)
    if patch.shape[-1] != params.in_channels:
        raise ShapeError(f"patch has {patch.shape[-1]} channels, model expects {params.in_channels}")
    named = params.named()
    t = {name: tape.parameter(arr, prefix + name) for name, arr in named.items()}
    h = tape.constant(patch)
    for i in range(len(params.backbone)):
        h = ad.relu(ad.conv2d(h, t[f"backbone.{i}.weight"], t[f"backbone.{i}.bias"]))
    logits_b = ad.conv2d(h, t["head_b.weight"], t["head_b.bias"])
    logits_e = ad.conv2d(h, t["head_e.weight"], t["head_e.bias"])
    return logits_b, logits_e


def _softmax_np(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def head_probabilities(params: ModelParams, patches: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Softmax maps of both heads without keeping gradients around."""
    tape = ad.Tape()
    lb, le = forward(params, patches, tape)
    return _softmax_np(lb.value), _softmax_np(le.value)


def _combine(pb: np.ndarray, pe: np.ndarray, heads: str) -> np.ndarray:
    if heads == "both":
        return (pb + pe) / 2.0
    if heads == "base":
        return pb
    if heads == "expanded":
        return pe
    raise ConfigError(f"heads must be 'both', 'base' or 'expanded', got {heads!r}")


def predict(params: ModelParams, image: np.ndarray, patch: int, stride: int,
            heads: str = "both", batch_size: int = 16) -> np.ndarray:
    """Tiled probability map of a whole image.

    Each tile's probability is the mean of the two heads' softmax maps
    (``heads="base"`` uses the base head only, for runs where the expanded
    head is never trained). Overlapping tiles are averaged.
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    if patch >= max(h, w):
        pb, pe = head_probabilities(params, image[None])
        return _combine(pb[0], pe[0], heads)
    size = min(patch, h, w)
    specs = tile_positions(h, w, size, stride)
    tiles = []
    for start in range(0, len(specs), batch_size):
        chunk = specs[start:start + batch_size]
        batch = np.stack([crop(image, s) for s in chunk])
        pb, pe = head_probabilities(params, batch)
        tiles.extend(zip(chunk, _combine(pb, pe, heads)))
    return stitch(tiles, h, w, params.k)
