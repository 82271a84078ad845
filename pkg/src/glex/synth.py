"""Synthetic scenarios and a small exact-greedy gradient boosting learner.

Random streams: every scenario draws from ``PCG64`` seeded with
``SeedSequence([seed, stream])`` where ``stream`` is the scenario's fixed id
below, so the same seed never shares draws across scenarios.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_rows
from .model import Dataset, Tree, TreeEnsemble, predict

SCENARIOS = {"interaction2d": 1, "importance4d": 2, "salary": 3}
SALARY_HOURS_SD = 4.0


def rng_for(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(stream)])))


@dataclass
class SimSpec:
    scenario: str
    n: int
    seed: int = 0
    corr: float = 0.3
    hours_sd: float = SALARY_HOURS_SD

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; choose from {sorted(SCENARIOS)}")
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if not -1.0 < self.corr < 1.0:
            raise ValueError("corr must lie strictly between -1 and 1")


def generate(spec: SimSpec) -> tuple[Dataset, np.ndarray]:
    """Draw covariates and the noiseless target for a scenario."""
    rng = rng_for(spec.seed, SCENARIOS[spec.scenario])
    n = spec.n
    if spec.scenario == "interaction2d":
        z = rng.standard_normal((n, 2))
        x1 = z[:, 0]
        x2 = spec.corr * z[:, 0] + np.sqrt(1.0 - spec.corr**2) * z[:, 1]
        y = x1 + x2 + 2.0 * x1 * x2
        return Dataset(np.column_stack([x1, x2]), ["x1", "x2"]), y
    if spec.scenario == "importance4d":
        x = rng.standard_normal((n, 4))
        y = x[:, 0] + x[:, 2] + x[:, 1] * x[:, 2] - 2.0 * x[:, 1] * x[:, 2] * x[:, 3]
        return Dataset(x, ["x1", "x2", "x3", "x4"]), y
    sex = np.zeros(n)
    sex[: n // 2] = 1.0
    sex = rng.permutation(sex)
    hours = np.where(sex == 1.0, 40.0, 30.0) + spec.hours_sd * rng.standard_normal(n)
    y = hours + 20.0 * sex
    return Dataset(np.column_stack([sex, hours]), ["sex", "hours"]), y


# -- boosting -----------------------------------------------------------------

@dataclass
class BoostParams:
    rounds: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    min_rows_per_leaf: int = 1

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not 1 <= self.max_depth <= 10:
            raise ValueError("max_depth must lie in [1, 10]")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.min_rows_per_leaf < 1:
            raise ValueError("min_rows_per_leaf must be >= 1")


def _best_split(X, resid, rows_sorted, n_features, min_rows):
    """Best variance-reduction split of a node; ties go to the lowest feature
    and then the lowest threshold."""
    best = (0.0, -1, 0.0)
    for f in range(n_features):
        rows = rows_sorted[f]
        m = len(rows)
        xs = X[rows, f]
        rs = resid[rows]
        total = rs.sum()
        sse = float(((rs - total / m) ** 2).sum())
        if sse <= 0.0:
            return best
        left_n = np.arange(1, m, dtype=np.float64)
        cs = np.cumsum(rs)[:-1]
        gain = cs**2 / left_n + (total - cs) ** 2 / (m - left_n) - total**2 / m
        ok = (xs[1:] > xs[:-1]) & (left_n >= min_rows) & (m - left_n >= min_rows)
        if not ok.any():
            continue
        gain = np.where(ok, gain, -np.inf)
        i = int(np.argmax(gain))
        if gain[i] > best[0] and gain[i] > 1e-12 * sse:
            thr = 0.5 * (xs[i] + xs[i + 1])
            if not xs[i] <= thr < xs[i + 1]:
                thr = xs[i]
            best = (float(gain[i]), f, float(thr))
    return best


def _fit_tree(X, resid, orders, params: BoostParams):
    """Grow one regression tree on the residuals, level by level."""
    n, d = X.shape
    node_of = np.zeros(n, dtype=np.int64)
    left, right, feature, threshold, value, cover = [-1], [-1], [-1], [0.0], [0.0], [float(n)]
    open_nodes = [0]
    for _ in range(params.max_depth):
        next_open = []
        for node in open_nodes:
            if cover[node] < 2 * params.min_rows_per_leaf:
                continue
            in_node = node_of == node
            rows_sorted = [order[in_node[order]] for order in orders]
            gain, f, thr = _best_split(X, resid, rows_sorted, d, params.min_rows_per_leaf)
            if f < 0:
                continue
            rows = rows_sorted[f]
            goes_left = X[rows, f] <= thr
            for side, sel in (("l", goes_left), ("r", ~goes_left)):
                child = len(left)
                left.append(-1)
                right.append(-1)
                feature.append(-1)
                threshold.append(0.0)
                value.append(0.0)
                cover.append(float(sel.sum()))
                node_of[rows[sel]] = child
                (left if side == "l" else right)[node] = child
                next_open.append(child)
            feature[node] = f
            threshold[node] = thr
        open_nodes = next_open
        if not open_nodes:
            break
    sums = np.bincount(node_of, weights=resid, minlength=len(left))
    counts = np.bincount(node_of, minlength=len(left))
    for node in range(len(left)):
        if left[node] < 0:
            value[node] = params.learning_rate * sums[node] / counts[node]
    tree = Tree(left, right, feature, threshold, value, cover, 0)
    return tree, np.asarray(value)[node_of]


def fit_gbt(X, y, params: BoostParams | None = None,
            feature_names=None) -> TreeEnsemble:
    """Squared-error gradient boosting with exact greedy CART trees.

    The offset is ``mean(y)``; node coverage is the training row count and
    splits send ``x <= threshold`` left.
    """
    params = params or BoostParams()
    if isinstance(X, Dataset):
        feature_names = feature_names or X.column_names
        X = X.values
    X = check_rows(X)
    y = np.asarray(y, dtype=np.float64).ravel()
    n, d = X.shape
    if y.shape[0] != n:
        raise ValueError(f"y has {y.shape[0]} values for {n} rows")
    if n < 2 * params.min_rows_per_leaf:
        raise ValueError("need at least 2 * min_rows_per_leaf rows")
    base = float(y.mean())
    names = list(feature_names) if feature_names is not None else None
    if np.all(y == y[0]):
        return TreeEnsemble([Tree.leaf(0.0, float(n))], d, base, names, "le")
    orders = [np.argsort(X[:, f], kind="stable") for f in range(d)]
    pred = np.full(n, base)
    trees = []
    for _ in range(params.rounds):
        tree, step = _fit_tree(X, y - pred, orders, params)
        trees.append(tree)
        pred += step
    return TreeEnsemble(trees, d, base, names, "le")


def refit_without(X, y, params: BoostParams | None, drop: int,
                  feature_names=None) -> TreeEnsemble:
    """Refit on the columns outside ``drop``; the result still takes all columns."""
    if isinstance(X, Dataset):
        feature_names = feature_names or X.column_names
        X = X.values
    X = check_rows(X)
    d = X.shape[1]
    keep = [k for k in range(d) if not drop >> k & 1]
    if not keep:
        raise ValueError("cannot drop every feature")
    small = fit_gbt(X[:, keep], y, params)
    remap = np.array(keep + [-1])
    trees = []
    for t in small.trees:
        feature = np.where(t.left >= 0, remap[t.feature], -1)
        trees.append(Tree(t.left, t.right, feature, t.threshold, t.value, t.cover, t.root))
    return TreeEnsemble(trees, d, small.base_offset, feature_names, "le")


def random_ensemble(rng: np.random.Generator, n_features: int, n_trees: int, max_depth: int,
                    split_prob: float = 0.85, base_offset: float = 0.0) -> TreeEnsemble:
    """Random trees with N(0,1) thresholds and leaves and random coverage shares.

    Each tree splits only on a random pool of at most ``max_depth`` features,
    so a tree never involves more features than its depth.
    """

    def grow(depth, nodes, cover, pool):
        idx = len(nodes)
        nodes.append(None)
        if depth < max_depth and (depth == 0 or rng.random() < split_prob):
            f = int(rng.choice(pool))
            thr = float(rng.normal())
            share = float(rng.uniform(0.05, 0.95))
            cl = cover * share
            l = grow(depth + 1, nodes, cl, pool)
            r = grow(depth + 1, nodes, cover - cl, pool)
            nodes[idx] = (l, r, f, thr, 0.0, cover)
        else:
            nodes[idx] = (-1, -1, -1, 0.0, float(rng.normal()), cover)
        return idx

    trees = []
    for _ in range(n_trees):
        pool = rng.choice(n_features, size=min(max_depth, n_features), replace=False)
        nodes: list = []
        grow(0, nodes, float(rng.uniform(50, 500)), pool)
        cols = list(zip(*nodes))
        trees.append(Tree(*cols, root=0))
    return TreeEnsemble(trees, n_features, base_offset)


class GradientBoostedTrees(RegressorMixin, BaseEstimator):
    """scikit-learn wrapper around :func:`fit_gbt`.

    The fitted ensemble is exposed as ``ensemble_`` so it can be handed to
    :class:`glex.FunctionalDecomposition`.
    """

    def __init__(self, n_estimators=100, max_depth=3, learning_rate=0.1, min_samples_leaf=1):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.min_samples_leaf = min_samples_leaf

    def fit(self, X, y):
        names = getattr(X, "columns", None)
        X = check_rows(X)
        params = BoostParams(self.n_estimators, self.max_depth, self.learning_rate,
                             self.min_samples_leaf)
        self.ensemble_ = fit_gbt(X, y, params,
                                 feature_names=None if names is None else [str(c) for c in names])
        self.n_features_in_ = X.shape[1]
        if names is not None:
            self.feature_names_in_ = np.asarray([str(c) for c in names], dtype=object)
        return self

    def predict(self, X):
        check_is_fitted(self, "ensemble_")
        return predict(self.ensemble_, check_rows(X, self.n_features_in_))

