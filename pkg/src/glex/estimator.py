"""scikit-learn style front end for the decomposition engines."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import bitset
from ._validation import check_rows
from .decompose import ALGORITHMS, ComponentStore, decompose
from .explain import (DebiasedModel, ImportanceReport, PdpCurve, ShapMatrix, importance, pdp,
                      remove_features, shap_from_components)
from .model import TreeEnsemble, check_ensemble


def _as_ensemble(model) -> TreeEnsemble:
    if isinstance(model, TreeEnsemble):
        return model
    ens = getattr(model, "ensemble_", None)
    if isinstance(ens, TreeEnsemble):
        return ens
    raise TypeError("model must be a TreeEnsemble or a fitted GradientBoostedTrees")


class FunctionalDecomposition(TransformerMixin, BaseEstimator):
    """Decompose a tree ensemble into intercept, main effects and interactions.

    Parameters
    ----------
    model : TreeEnsemble or GradientBoostedTrees
        The model to explain. An unfitted ``GradientBoostedTrees`` is fitted
        on ``(X, y)`` in :meth:`fit`.
    algorithm : {'fast', 'naive', 'grid'}
        Engine. ``grid`` marginalizes against the rows seen in :meth:`fit`
        instead of the trees' cover statistics.
    threads : int
        Worker cap for the ``fast`` engine.

    ``transform`` returns one column per realized subset, preceded by the
    intercept; the columns of a row sum to the model prediction.
    """

    def __init__(self, model=None, algorithm="fast", threads=1):
        self.model = model
        self.algorithm = algorithm
        self.threads = threads

    def fit(self, X, y=None):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.model is None:
            raise ValueError("a model is required")
        model = self.model
        if not isinstance(model, TreeEnsemble) and getattr(model, "ensemble_", None) is None:
            if y is None:
                raise ValueError("model is not fitted and no target was given")
            model = model.fit(X, y)
        self.ensemble_ = check_ensemble(_as_ensemble(model))
        X = check_rows(X, self.ensemble_.n_features)
        self.n_features_in_ = X.shape[1]
        self.background_ = X
        subsets = set()
        for tree in self.ensemble_.trees:
            subsets.update(S for S in bitset.submasks(tree.feature_set) if S)
        self.subsets_ = sorted(subsets, key=lambda s: (bitset.popcount(s), bitset.to_indices(s)))
        return self

    def decompose(self, X) -> ComponentStore:
        check_is_fitted(self, "ensemble_")
        X = check_rows(X, self.n_features_in_)
        bg = self.background_ if self.algorithm == "grid" else None
        return decompose(self.ensemble_, X, self.algorithm, self.threads, background=bg)

    def transform(self, X) -> np.ndarray:
        store = self.decompose(X)
        cols = [np.full(store.n_rows, store.intercept)] + [store[S] for S in self.subsets_]
        return np.column_stack(cols)

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "ensemble_")
        names = self.ensemble_.feature_names
        return np.asarray(["intercept"] + [bitset.subset_name(S, names) for S in self.subsets_],
                          dtype=object)

    def predict(self, X) -> np.ndarray:
        """Sum of all components; equals the model prediction."""
        return self.decompose(X).total()

    def shap(self, X) -> ShapMatrix:
        return shap_from_components(self.decompose(X))

    def pdp(self, X, subset) -> PdpCurve:
        S = self._mask(subset)
        return pdp(self.decompose(X), S, X)

    def importance(self, X) -> ImportanceReport:
        return importance(self.decompose(X))

    def remove(self, X, features) -> DebiasedModel:
        return remove_features(self.decompose(X), self._mask(features))

    def _mask(self, subset) -> int:
        check_is_fitted(self, "ensemble_")
        names = self.ensemble_.feature_names
        if isinstance(subset, str):
            return bitset.parse_subset(subset, names)
        if isinstance(subset, (int, np.integer)):
            return int(subset)
        return bitset.from_indices(names.index(s) if isinstance(s, str) else s for s in subset)
