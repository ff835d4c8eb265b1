"""Distributional (quantile-function) features and sparse logistic classification."""
__version__ = "0.1.0"

from .classifier import ScalarOnQuantileClassifier, assemble_features, fit_model, predict
from .dictionary import build_dictionary
from .epm import EPMMapper, compute_epm, fit_normal_curve
from .evaluation import confusion_metrics, loocv_evaluate
from .l1solver import L1LogisticRegression, LassoCD, cv_select_lambda, lasso_fit, logistic_l1_fit
from .quantile import EmpiricalQuantileTransformer, empirical_quantiles, standard_grid
from .quantlet import (PixelQuantletTransformer, QuantletTransformer, finalize_basis,
                       loo_concordance, rank_and_reduce, select_union_basis)
from .synth import CohortSpec, generate_cohort

__all__ = [
    "CohortSpec", "EPMMapper", "EmpiricalQuantileTransformer", "L1LogisticRegression", "LassoCD",
    "PixelQuantletTransformer", "QuantletTransformer", "ScalarOnQuantileClassifier",
    "assemble_features", "build_dictionary", "compute_epm", "confusion_metrics",
    "cv_select_lambda", "empirical_quantiles", "finalize_basis", "fit_model", "fit_normal_curve",
    "generate_cohort", "lasso_fit", "logistic_l1_fit", "loo_concordance", "loocv_evaluate",
    "predict", "rank_and_reduce", "select_union_basis", "standard_grid",
]
