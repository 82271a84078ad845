"""Explanations derived from a component store.

SHAP values split each interaction component equally among its features,
partial dependence is the sum of the components inside the target subset,
and post-hoc removal drops every component touching the removed features.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import bitset
from ._validation import check_rows
from .decompose import ComponentStore
from .marginalize import coverage_ratios, marginal_predict_rows
from .model import TreeEnsemble

BRUTEFORCE_MAX_FEATURES = 20


@dataclass
class ShapMatrix:
    phi0: float
    values: np.ndarray
    feature_names: list[str] = field(default_factory=list)

    def total(self) -> np.ndarray:
        return self.phi0 + self.values.sum(axis=1)


def shap_from_components(store: ComponentStore) -> ShapMatrix:
    """Interventional SHAP values: ``phi_k = sum_{S containing k} m_S / |S|``."""
    phi = np.zeros((store.n_rows, store.n_features))
    for S in store.realized_subsets:
        feats = bitset.to_indices(S)
        share = store.components[S] / len(feats)
        for k in feats:
            phi[:, k] += share
    return ShapMatrix(store.intercept, phi, list(store.feature_names))


def marginalized_prediction(ensemble: TreeEnsemble, keep: int, X) -> np.ndarray:
    """Prediction with every feature outside ``keep`` integrated out.

    Evaluated tree by tree with the single-subset recursion, independently of
    the decomposition engines.
    """
    X = check_rows(X, ensemble.n_features)
    out = np.full(X.shape[0], float(ensemble.base_offset))
    for tree in ensemble.trees:
        T = tree.feature_set
        out += marginal_predict_rows(tree, T & ~keep, X, ensemble.comparison_rule)
    return out


def _value_table(ensemble: TreeEnsemble, X: np.ndarray) -> np.ndarray:
    """``v[S, i]``: value of coalition ``S`` (all ``2**d`` of them) at row ``i``."""
    d = ensemble.n_features
    subsets = np.arange(1 << d, dtype=np.int64)
    v = np.full((1 << d, X.shape[0]), float(ensemble.base_offset))
    for tree in ensemble.trees:
        feats = tree.features
        k = len(feats)
        ratios = coverage_ratios(tree)
        marg = np.empty((1 << k, X.shape[0]))
        for u in range(1 << k):
            U = bitset.expand(u, feats)
            marg[u] = marginal_predict_rows(tree, U, X, ensemble.comparison_rule, ratios)
        local = np.zeros_like(subsets)
        for p, f in enumerate(feats):
            local |= ((subsets >> f) & 1) << p
        v += marg[((1 << k) - 1) ^ local]
    return v


def shap_bruteforce(ensemble: TreeEnsemble, X) -> ShapMatrix:
    """Exact Shapley values by summing over all coalitions.

    Uses the subset form with weights ``|S|! (d-|S|-1)! / d!`` and the
    coverage-marginalized value function. Exponential in the number of
    features, so refused above 20.
    """
    d = ensemble.n_features
    if d > BRUTEFORCE_MAX_FEATURES:
        raise ValueError(
            f"brute-force Shapley values need d <= {BRUTEFORCE_MAX_FEATURES}, model has d = {d}"
        )
    single = np.ndim(X) == 1
    X = check_rows(np.atleast_2d(X), d)
    v = _value_table(ensemble, X)
    subsets = np.arange(1 << d)
    sizes = np.array([bitset.popcount(int(s)) for s in subsets])
    weight = np.array(
        [math.factorial(s) * math.factorial(d - s - 1) / math.factorial(d) if s < d else 0.0
         for s in range(d + 1)]
    )
    phi = np.zeros((X.shape[0], d))
    for k in range(d):
        without = subsets[(subsets >> k & 1) == 0]
        gains = v[without | (1 << k)] - v[without]
        phi[:, k] = weight[sizes[without]] @ gains
    phi0 = float(v[0, 0])
    out = ShapMatrix(phi0, phi, list(ensemble.feature_names))
    if single:
        out.values = phi[0]
    return out


@dataclass
class PdpCurve:
    subset: int
    points: np.ndarray
    values: np.ndarray


def pdp(store: ComponentStore, S: int, X=None) -> PdpCurve:
    """Partial dependence on ``S``: intercept plus all components inside ``S``.

    ``X`` supplies the coordinates reported alongside each value; it must be
    the rows the store was computed on.
    """
    feats = bitset.to_indices(S)
    if X is not None:
        X = check_rows(X, store.n_features)
        points = X[:, feats]
    else:
        points = np.empty((store.n_rows, 0))
    return PdpCurve(S, points, store.subset_sum(S))


@dataclass
class ImportanceReport:
    shap_importance: np.ndarray
    split_importance: np.ndarray
    component_importance: dict[int, float]
    feature_names: list[str] = field(default_factory=list)

    def rows(self):
        """``(kind, key, value)`` triples in a stable order."""
        for k, name in enumerate(self.feature_names):
            yield "shap", name, float(self.shap_importance[k])
        for k, name in enumerate(self.feature_names):
            yield "split", name, float(self.split_importance[k])
        for S, val in self.component_importance.items():
            yield "component", bitset.subset_name(S, self.feature_names), float(val)


def importance(store: ComponentStore, shap: ShapMatrix | None = None) -> ImportanceReport:
    """Mean absolute SHAP value, mean split contribution and mean |component|."""
    if shap is None:
        shap = shap_from_components(store)
    if shap.values.shape != (store.n_rows, store.n_features):
        raise ValueError("SHAP matrix and component store describe different rows")
    shap_imp = np.abs(shap.values).mean(axis=0)
    split = np.zeros((store.n_rows, store.n_features))
    comp = {}
    for S in store.realized_subsets:
        absval = np.abs(store.components[S])
        comp[S] = float(absval.mean())
        feats = bitset.to_indices(S)
        for k in feats:
            split[:, k] += absval / len(feats)
    return ImportanceReport(shap_imp, split.mean(axis=0), comp, list(store.feature_names))


@dataclass
class DebiasedModel:
    removed: int
    store: ComponentStore

    def predict(self, row: int | None = None):
        return predict_debiased(self, row)


def remove_features(model: ComponentStore | DebiasedModel, U: int) -> DebiasedModel:
    """Drop every component that involves a feature of ``U``."""
    if isinstance(model, DebiasedModel):
        U |= model.removed
        model = model.store
    if U >> model.n_features:
        raise ValueError("removed set names features beyond the model's feature count")
    return DebiasedModel(U, model.restrict(lambda S: not S & U))


def predict_debiased(model: DebiasedModel, row: int | None = None):
    """De-biased prediction for one stored row, or for all rows."""
    values = model.store.total()
    if row is None:
        return values
    if not 0 <= row < model.store.n_rows:
        raise IndexError(f"row {row} outside [0, {model.store.n_rows})")
    return float(values[row])
