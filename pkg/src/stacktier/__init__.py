"""Two-level stacking ensembles."""
from .kernels import BACKEND
from .learners import LearnerSpec, fit_learner, predict_score
from .metrics import MetricReport, average_precision, full_report, roc_auc
from .sampling import SmoteParams, smote_oversample
from .stacking import (InternalStack, MetaFeatures, OneLevelModel, StackConfig, TwoLevelModel,
                       fit_internal_stack, fit_one_level, fit_two_level, oof_meta_features,
                       predict_internal, predict_two_level)
from .tabular import Dataset, SyntheticSpec, generate_synthetic, load_csv, make_folds, stratified_split
from .tuning import SelectionPolicy, grid_search, select_top_configs

__all__ = [
    "average_precision",
    "BACKEND",
    "Dataset",
    "fit_internal_stack",
    "fit_learner",
    "fit_one_level",
    "fit_two_level",
    "full_report",
    "generate_synthetic",
    "grid_search",
    "InternalStack",
    "LearnerSpec",
    "load_csv",
    "make_folds",
    "MetaFeatures",
    "MetricReport",
    "OneLevelModel",
    "oof_meta_features",
    "predict_internal",
    "predict_score",
    "predict_two_level",
    "roc_auc",
    "select_top_configs",
    "SelectionPolicy",
    "smote_oversample",
    "SmoteParams",
    "StackConfig",
    "stratified_split",
    "SyntheticSpec",
    "TwoLevelModel",
]

__version__ = "0.1.0"
