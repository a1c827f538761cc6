"""Learned stand-in for the laser link, trainable end to end."""

from .cat import CatConfig, build_cat, cat_forward
from .data import FrameDataset, draw_frame_command, generate_dataset
from .train import (
    GridEvaluation,
    TrainReport,
    batch_nrmse,
    default_cat_config,
    desk_training_run,
    evaluate_surrogate,
    nrmse_loss,
    per_frame_nrmse,
    train_surrogate,
)

__all__ = [
    "CatConfig", "build_cat", "cat_forward", "FrameDataset",
    "draw_frame_command", "generate_dataset", "GridEvaluation",
    "TrainReport", "batch_nrmse", "default_cat_config", "desk_training_run",
    "evaluate_surrogate", "nrmse_loss", "per_frame_nrmse", "train_surrogate",
]
