"""Bayesian integrative factor analysis (BIP / BIPnet) for multi-view data with an outcome."""

from bipnet.model_core import (
    BipError,
    ConfigError,
    GroupDesign,
    Hyperparameters,
    NumericalError,
    SamplerOptions,
    ValidationError,
    ViewSet,
    make_group_design,
)
from bipnet.predict import FittedModel, bma_predict, predict_viewset
from bipnet.run_models import evaluate_model, fit_model

__version__ = "0.1.0"

__all__ = [
    "BipError",
    "ConfigError",
    "FittedModel",
    "GroupDesign",
    "Hyperparameters",
    "NumericalError",
    "SamplerOptions",
    "ValidationError",
    "ViewSet",
    "bma_predict",
    "evaluate_model",
    "fit_model",
    "make_group_design",
    "predict_viewset",
]
