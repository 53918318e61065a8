"""Staged liver-segmentation training for multi-modal perfusion suites.

A multi-scale attention U-Net is trained serially - synthetic pretraining,
then ct, cbct, cbct_tst - with each finished stage pre-training the next
while still delivering that stage's segmentations.  The package talks to
the reconstruction toolkit exclusively through files (TSR tensors, manifest
JSON) and its command line.
"""

from .augment import AugmentationConfig, augment
from .data import generate_pretrain_dataset, load_pairs, normalize_slice
from .errors import (
    ConfigurationError,
    FormatError,
    ManifestError,
    ScheduleError,
    ShapeError,
    TurboliftError,
)
from .experiment import ExperimentConfig, run_experiment, run_schedule
from .losses import LossConfig, focal_tversky_loss, mss_loss, tversky_index
from .manifest import Manifest, load_manifest
from .model import AttentionGate, ModelSpec, MultiscaleAttentionUNet, build_model
from .schedule import (
    PRESETS,
    StageEntry,
    StageSchedule,
    build_schedule,
    load_checkpoint,
    save_checkpoint,
    stage_order,
)
from .train import TrainConfig, export_masks, predict_mask, run_stage, train_stage
from .tsrio import read_tensor, write_tensor

__all__ = [
    "AttentionGate",
    "AugmentationConfig",
    "ConfigurationError",
    "ExperimentConfig",
    "FormatError",
    "LossConfig",
    "Manifest",
    "ManifestError",
    "ModelSpec",
    "MultiscaleAttentionUNet",
    "PRESETS",
    "ScheduleError",
    "ShapeError",
    "StageEntry",
    "StageSchedule",
    "TrainConfig",
    "TurboliftError",
    "augment",
    "build_model",
    "build_schedule",
    "export_masks",
    "focal_tversky_loss",
    "generate_pretrain_dataset",
    "load_checkpoint",
    "load_manifest",
    "load_pairs",
    "mss_loss",
    "normalize_slice",
    "predict_mask",
    "read_tensor",
    "run_experiment",
    "run_schedule",
    "run_stage",
    "save_checkpoint",
    "stage_order",
    "train_stage",
    "tversky_index",
    "write_tensor",
]
