"""Mixture of linear regression experts for multi-output encoding models."""

from .analysis import assign_samples, cluster_stimuli, region_activation_matrix, region_importance
from .baseline import RidgeModel, ridge_fit, ridge_predict
from .dataset import AtlasMap, Dataset
from .estimators import MixtureOfExpertsRegressor, RidgeRegressor
from .exceptions import MixRegError
from .model import MixtureModel, gate_probabilities, log_likelihood, predict_mean, responsibilities
from .selection import bic, kfold_evaluate, make_fold_plan, n_params, select_k
from .synthetic import SyntheticSpec, generate_synthetic
from .trainer import TrainingConfig, TrainingTrace, fit

__version__ = "0.1.0"

__all__ = [
    "AtlasMap",
    "Dataset",
    "MixRegError",
    "MixtureModel",
    "MixtureOfExpertsRegressor",
    "RidgeModel",
    "RidgeRegressor",
    "SyntheticSpec",
    "TrainingConfig",
    "TrainingTrace",
    "assign_samples",
    "bic",
    "cluster_stimuli",
    "fit",
    "gate_probabilities",
    "generate_synthetic",
    "kfold_evaluate",
    "log_likelihood",
    "make_fold_plan",
    "n_params",
    "predict_mean",
    "region_activation_matrix",
    "region_importance",
    "responsibilities",
    "ridge_fit",
    "ridge_predict",
    "select_k",
]
