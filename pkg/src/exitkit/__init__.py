"""Explicit cross-domain interest transfer toolkit.

Builds interest-combination labels from multi-domain purchase logs, trains
the dual-tower-plus-scene-selector model with the multi-interest joint
loss, and demonstrates negative-transfer prevention on synthetic data.
"""

from .datagen import CategorySpec, GroundTruth, InteractionRecord, WorldConfig, generate, split
from .labels import GciMap, LabeledExample, aggregate_source, build_icl, build_icl_variant, compute_gci, label_dataset
from .model import ModelConfig, Prediction, clamp_serving, combine, forward, init_params, load_checkpoint, predict, save_checkpoint
from .training import Dataset, MetricsReport, TrainConfig, fit, joint_loss, simulate_exposure
from .metrics import auc, logloss

__all__ = [
    "CategorySpec", "GroundTruth", "InteractionRecord", "WorldConfig", "generate", "split",
    "GciMap", "LabeledExample", "aggregate_source", "build_icl", "build_icl_variant",
    "compute_gci", "label_dataset",
    "ModelConfig", "Prediction", "clamp_serving", "combine", "forward", "init_params",
    "load_checkpoint", "predict", "save_checkpoint",
    "Dataset", "MetricsReport", "TrainConfig", "fit", "joint_loss", "simulate_exposure",
    "auc", "logloss",
]
