"""Bagged regression-tree surrogates for the response-curve parameters."""

from .features import (
    FeatureSchema,
    FeatureVector,
    TrainingSet,
    augment_groundwater,
    density_weights,
    impute_nearest,
    impute_table,
    read_feature_table,
    write_feature_table,
)
from .modelio import load_model, save_model
from .training import cv_mse, default_grid, grid_search, kfold_assign, make_grid, oof_predictions, spatial_split
from .trees import Hyperparams, Tree, TreeEnsemble, fit_tree, predict, predictor_importance, train_bagged

__all__ = [
    "FeatureSchema",
    "FeatureVector",
    "TrainingSet",
    "augment_groundwater",
    "density_weights",
    "impute_nearest",
    "impute_table",
    "read_feature_table",
    "write_feature_table",
    "load_model",
    "save_model",
    "cv_mse",
    "default_grid",
    "grid_search",
    "kfold_assign",
    "make_grid",
    "oof_predictions",
    "spatial_split",
    "Hyperparams",
    "Tree",
    "TreeEnsemble",
    "fit_tree",
    "predict",
    "predictor_importance",
    "train_bagged",
]
