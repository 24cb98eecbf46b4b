"""Semantic segmentation from point annotations with region growing,
two-head consistency training and pseudo-label self-training."""
from .estimator import PointSupervisedSegmenter
from .model import ModelParams, forward, init_params, predict
from .regiongrow import GrowParams, grow, grow_oracle, init_expanded
from .synthdata import SceneSpec, gen_scene, make_dataset, sample_points
from .trainer import TrainConfig, TrainLogRecord, train

__version__ = "0.1.0"

__all__ = [
    "PointSupervisedSegmenter", "ModelParams", "forward", "init_params", "predict",
    "GrowParams", "grow", "grow_oracle", "init_expanded", "SceneSpec", "gen_scene",
    "make_dataset", "sample_points", "TrainConfig", "TrainLogRecord", "train",
]
