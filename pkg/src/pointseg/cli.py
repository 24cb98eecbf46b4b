"""Command-line interface.

Subcommands: ``gen``, ``train``, ``grow``, ``predict``, ``eval``.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime or
numeric error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, PointSegError, ShapeError
from .fileformats import (read_checkpoint, read_labels, read_raster, write_checkpoint,
                          write_raster)
from .grid import argmax_labels
from .metrics import confusion, scores, scores_csv
from .model import ModelParams, predict
from .regiongrow import GrowParams, grow
from .synthdata import SceneSpec, gen_scene, sample_points
from .trainer import TrainConfig, train
from .validation import check_probability_raster

log = logging.getLogger("pointseg")

GEN_KEYS = {f.name for f in dataclasses.fields(SceneSpec)} | {"n_scenes", "points_per_class"}


def _load_json(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top-level JSON value must be an object")
    return data


def load_image(path) -> np.ndarray:
    """Read an image raster; ``u8`` images are scaled to [0, 1]."""
    arr = read_raster(path)
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    return arr.astype(np.float64)


def _dump(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


# -- commands --------------------------------------------------------------

def cmd_gen(config_path, out_dir, seed: int | None = None) -> list[dict]:
    cfg = _load_json(config_path)
    unknown = sorted(set(cfg) - GEN_KEYS)
    if unknown:
        raise ConfigError(f"{config_path}: unknown config keys: {', '.join(unknown)}")
    n_scenes = cfg.pop("n_scenes", 1)
    ppc = cfg.pop("points_per_class", 5)
    if not isinstance(n_scenes, int) or n_scenes < 1:
        raise ConfigError(f"{config_path}: n_scenes must be a positive integer, got {n_scenes!r}")
    if seed is not None:
        cfg["seed"] = seed
    try:
        base = SceneSpec(**cfg)
    except TypeError as exc:
        raise ConfigError(f"{config_path}: {exc}") from None
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = []
    for i in range(n_scenes):
        spec = dataclasses.replace(base, seed=base.seed + i)
        image, gt = gen_scene(spec)
        points = sample_points(gt, ppc, seed=spec.seed + 7919)
        stem = f"scene_{i:04d}"
        files = {"image": f"{stem}_image.crg", "gt": f"{stem}_gt.crg", "points": f"{stem}_points.crg"}
        write_raster(out / files["image"], image.astype(np.float32), "f32")
        write_raster(out / files["gt"], gt, "u8")
        write_raster(out / files["points"], points, "u8")
        manifest.append({"id": i, "seed": spec.seed, **files,
                         "n_points": int((points > 0).sum())})
    return manifest


def load_dataset(data_dir) -> list[tuple[np.ndarray, np.ndarray]]:
    data = Path(data_dir)
    images = sorted(data.glob("*_image.crg"))
    if not images:
        raise DataError(f"no *_image.crg files in {data_dir}")
    dataset = []
    for img_path in images:
        pts_path = img_path.with_name(img_path.name.replace("_image.crg", "_points.crg"))
        if not pts_path.exists():
            raise DataError(f"missing point labels {pts_path.name} for {img_path.name}")
        dataset.append((load_image(img_path), read_labels(pts_path)))
    return dataset


def cmd_train(config_path, data_dir, out_dir, overrides: dict | None = None) -> Path:
    raw = _load_json(config_path) if config_path else {}
    cfg = TrainConfig.from_dict({**raw, **(overrides or {})})
    dataset = load_dataset(data_dir)
    if dataset[0][0].shape[-1] != cfg.in_channels:
        cfg = dataclasses.replace(cfg, in_channels=dataset[0][0].shape[-1])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "train_log.jsonl", "w", encoding="utf-8") as fh:
        def emit(rec):
            fh.write(json.dumps(dataclasses.asdict(rec)) + "\n")

        params, _ = train(cfg, dataset, on_record=emit)
    write_checkpoint(out / "model.ckpt", params.named())
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return out / "model.ckpt"


def cmd_grow(prob_path, points_path, tau: float, out_path) -> np.ndarray:
    prob = read_raster(prob_path).astype(np.float64)
    check_probability_raster(prob)
    points = read_labels(points_path)
    if points.shape != prob.shape[:2]:
        raise ShapeError(f"points {points.shape} and probabilities {prob.shape[:2]} differ in size")
    expanded = grow(points, prob, GrowParams(tau))
    write_raster(out_path, expanded, "u8")
    return expanded


def cmd_predict(checkpoint, image_path, patch: int, stride: int, out_dir,
                heads: str = "both") -> tuple[Path, Path]:
    params = ModelParams.from_named(read_checkpoint(checkpoint))
    image = load_image(image_path)
    prob = predict(params, image, patch, stride, heads=heads)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    label_path, prob_path = out / "labels.crg", out / "probs.crg"
    write_raster(label_path, argmax_labels(prob), "u8")
    write_raster(prob_path, prob, "f64")
    return label_path, prob_path


def cmd_eval(pred_path, gt_path, k: int, out_dir) -> dict:
    pred, gt = read_labels(pred_path), read_labels(gt_path)
    s = scores(confusion(pred, gt, k))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(scores_csv(s))
    summary = s.summary()
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


# -- argument parsing ------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pointseg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate synthetic scenes")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("train", help="train a two-head model on point labels")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--lambda-con", type=float, dest="lambda_con")
    p.add_argument("--no-rg", action="store_true")
    p.add_argument("--no-cr", action="store_true")
    p.add_argument("--no-st", action="store_true")
    p.add_argument("--consistency", choices=["mse", "kl"])
    p.add_argument("--temperature", type=float)

    p = sub.add_parser("grow", help="region-grow point labels over a probability map")
    p.add_argument("prob")
    p.add_argument("points")
    p.add_argument("--tau", type=float, default=0.95)
    p.add_argument("--out", required=True)

    p = sub.add_parser("predict", help="tiled prediction with a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("image")
    p.add_argument("--patch", type=int, default=128)
    p.add_argument("--stride", type=int, default=40)
    p.add_argument("--heads", choices=["both", "base", "expanded"], default="both")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="score a label raster against dense ground truth")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", required=True)
    return parser


def _train_overrides(args) -> dict:
    out = {}
    for key in ("seed", "tau", "lambda_con", "temperature"):
        if getattr(args, key) is not None:
            out[key] = getattr(args, key)
    if args.consistency:
        out["consistency_kind"] = args.consistency
    if args.no_rg:
        out["enable_rg"] = False
    if args.no_cr:
        out["enable_cr"] = False
    if args.no_st:
        out["enable_st"] = False
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gen":
            _dump(cmd_gen(args.config, args.out, args.seed))
        elif args.command == "train":
            print(cmd_train(args.config, args.data, args.out, _train_overrides(args)))
        elif args.command == "grow":
            e = cmd_grow(args.prob, args.points, args.tau, args.out)
            _dump({"out": args.out, "n_labeled": int((e > 0).sum())})
        elif args.command == "predict":
            labels, probs = cmd_predict(args.checkpoint, args.image, args.patch, args.stride,
                                        args.out, args.heads)
            _dump({"labels": str(labels), "probs": str(probs)})
        elif args.command == "eval":
            _dump(cmd_eval(args.pred, args.gt, args.k, args.out))
    except PointSegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (FloatingPointError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
