"""Multiplicative block-DCT filter-bank attacks on image classifiers."""

from .attack import (
    AttackConfig,
    AttackReport,
    AttackResult,
    BlockDCTFilter,
    MufiaAttack,
    attack_dataset,
    attack_image,
    forward_pipeline,
    pipeline_gradient,
)
from .classifier import ConvNetClassifier, NetworkSpec, load_weights, save_weights, train
from .imageio import LabeledDataset, generate_synthetic_dataset

__version__ = "0.1.0"

__all__ = [
    "AttackConfig",
    "AttackReport",
    "AttackResult",
    "BlockDCTFilter",
    "ConvNetClassifier",
    "LabeledDataset",
    "MufiaAttack",
    "NetworkSpec",
    "attack_dataset",
    "attack_image",
    "forward_pipeline",
    "generate_synthetic_dataset",
    "load_weights",
    "pipeline_gradient",
    "save_weights",
    "train",
]
