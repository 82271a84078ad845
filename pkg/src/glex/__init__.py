"""Identified functional decomposition of tree ensembles.

Splits a tree-ensemble regression model into an intercept, main effects and
interaction components under marginal identification, and derives SHAP
values, partial dependence, feature importance and feature removal from it.
"""
from .decompose import (ComponentStore, EmpiricalDensity, GridEnsemble, GridTerm, decompose,
                        decompose_empirical, decompose_fast, decompose_grid, decompose_naive,
                        estimate_density, grid_from_ensemble, verify_identification)
from .estimator import FunctionalDecomposition
from .explain import (DebiasedModel, ImportanceReport, PdpCurve, ShapMatrix, importance, pdp,
                      predict_debiased, remove_features, shap_bruteforce, shap_from_components)
from .marginalize import SubsetMatrix, marginal_predict, marginal_predict_all
from .model import (Dataset, Tree, TreeEnsemble, load_model, parse_booster_dump,
                    parse_native_model, predict, read_csv, serialize, validate, write_csv)
from .synth import BoostParams, GradientBoostedTrees, SimSpec, fit_gbt, generate, refit_without

__version__ = "0.1.0"

__all__ = [
    "BoostParams", "ComponentStore", "Dataset", "DebiasedModel", "EmpiricalDensity",
    "FunctionalDecomposition", "GradientBoostedTrees", "GridEnsemble", "GridTerm",
    "ImportanceReport", "PdpCurve", "ShapMatrix", "SimSpec", "SubsetMatrix", "Tree",
    "TreeEnsemble", "decompose", "decompose_empirical", "decompose_fast", "decompose_grid",
    "decompose_naive", "estimate_density", "fit_gbt", "generate", "grid_from_ensemble",
    "importance", "load_model", "marginal_predict", "marginal_predict_all",
    "parse_booster_dump", "parse_native_model", "pdp", "predict", "predict_debiased",
    "read_csv", "refit_without", "remove_features", "serialize", "shap_bruteforce",
    "shap_from_components", "validate", "verify_identification", "write_csv",
]
