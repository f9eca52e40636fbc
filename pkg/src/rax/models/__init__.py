from .boosting import BoostedModel, BoostingConfig, fit_gradient_boosting
from .forest import ForestConfig, ForestModel, fit_random_forest
from .io import load_model, save_model
from .linear import LinearModel, fit_logistic
from .objectives import (
    Objective,
    focal,
    focal_objective,
    softmax,
    softmax_objective,
    weighted_softmax_objective,
)
from .predict import SchemaMismatchError, predict_class, predict_proba, raw_margin, score_batch
from .tree import Binner, Tree, TreeConfig, fit_tree

__all__ = [
    "BoostedModel",
    "BoostingConfig",
    "Binner",
    "ForestConfig",
    "ForestModel",
    "LinearModel",
    "Objective",
    "SchemaMismatchError",
    "Tree",
    "TreeConfig",
    "fit_gradient_boosting",
    "fit_logistic",
    "fit_random_forest",
    "fit_tree",
    "focal",
    "focal_objective",
    "load_model",
    "predict_class",
    "predict_proba",
    "raw_margin",
    "save_model",
    "score_batch",
    "softmax",
    "softmax_objective",
    "weighted_softmax_objective",
]
