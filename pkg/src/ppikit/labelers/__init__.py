"""Trainable pseudo-labelers and the cross-fitting / bootstrap protocols."""

from .base import (
    BootstrapRun,
    ConstantLabeler,
    DegenerateFitWarning,
    FixedLabeler,
    Labeler,
    LabelerSpec,
    bootstrap_models,
    fit,
    predict,
    register_labeler,
    train_fold_models,
)
from .forest import ForestRegressor
from .mlp import Adam, MlpArch, train_mlp

__all__ = [
    "Adam", "BootstrapRun", "ConstantLabeler", "DegenerateFitWarning", "FixedLabeler",
    "ForestRegressor", "Labeler", "LabelerSpec", "MlpArch", "bootstrap_models", "fit",
    "predict", "register_labeler", "train_fold_models", "train_mlp",
]
