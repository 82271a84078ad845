"""Marginally identified functional decomposition of additive tree models.

Every tree with feature set ``T`` contributes to the components ``S`` of
``T`` through signed sums of its marginalized predictions::

    m_S(x) = sum_{V subset of S} (-1)^{|S|-|V|} M_T(x; integrate out T minus V)

and the contributions of all trees are added. Components are stored only for
subsets that some tree can realize.
"""
from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import bitset
from ._validation import check_rows, max_depth_cap
from .marginalize import check_depth, coverage_ratios, marginal_predict_rows, subset_table
from .model import TreeEnsemble, tree_predict

EFFICIENCY_ATOL = 1e-9


@dataclass
class ComponentStore:
    """Component values ``m_S(x_i)`` for the explained rows plus the intercept."""

    intercept: float
    components: dict[int, np.ndarray]
    n_rows: int
    n_features: int
    feature_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.feature_names:
            self.feature_names = [f"x{k}" for k in range(self.n_features)]

    @property
    def realized_subsets(self) -> list[int]:
        return sorted(self.components, key=lambda s: (bitset.popcount(s), bitset.to_indices(s)))

    @property
    def q(self) -> int:
        return max((bitset.popcount(s) for s in self.components), default=0)

    def __getitem__(self, S: int) -> np.ndarray:
        if S == 0:
            return np.full(self.n_rows, self.intercept)
        if S in self.components:
            return self.components[S]
        return np.zeros(self.n_rows)

    def total(self) -> np.ndarray:
        """Intercept plus every component, per row."""
        out = np.full(self.n_rows, self.intercept)
        for S in self.realized_subsets:
            out += self.components[S]
        return out

    def subset_sum(self, U: int) -> np.ndarray:
        """Sum of the intercept and all components contained in ``U``."""
        out = np.full(self.n_rows, self.intercept)
        for S in self.realized_subsets:
            if bitset.is_subset(S, U):
                out += self.components[S]
        return out

    def restrict(self, keep) -> "ComponentStore":
        """Copy holding only the components whose subset satisfies ``keep``."""
        comps = {S: v for S, v in self.components.items() if keep(S)}
        return ComponentStore(self.intercept, comps, self.n_rows, self.n_features,
                              list(self.feature_names))

    def name(self, S: int) -> str:
        return bitset.subset_name(S, self.feature_names)

    def to_frame(self):
        """Wide table: one column per realized subset, intercept first."""
        import pandas as pd

        data = {"": np.full(self.n_rows, self.intercept)}
        for S in self.realized_subsets:
            data[self.name(S)] = self.components[S]
        return pd.DataFrame(data)


def _accumulate(comps: dict, S: int, values: np.ndarray) -> None:
    if S in comps:
        comps[S] = comps[S] + values
    else:
        comps[S] = np.array(values, dtype=np.float64)


def _finish(ensemble, intercept, comps, n):
    return ComponentStore(float(intercept), comps, n, ensemble.n_features,
                          list(ensemble.feature_names))


def decompose_naive(ensemble: TreeEnsemble, X) -> ComponentStore:
    """Decompose by evaluating every signed marginal separately.

    For each tree ``T``, each ``S`` contained in ``T`` and each ``U`` between
    ``T \\ S`` and ``T`` the marginalized prediction is recomputed from
    scratch, so the cost grows as ``3**|T|`` tree traversals per tree.
    """
    X = check_rows(X, ensemble.n_features)
    n = X.shape[0]
    intercept = float(ensemble.base_offset)
    comps: dict[int, np.ndarray] = {}
    rule = ensemble.comparison_rule
    for tree in ensemble.trees:
        check_depth(tree)
        T = tree.feature_set
        ratios = coverage_ratios(tree)
        for S in bitset.submasks(T):
            rest = T & ~S
            size_s = bitset.popcount(S)
            acc = np.zeros(n)
            for W in bitset.submasks(S):
                U = rest | W
                sign = bitset.mobius_sign(size_s, bitset.popcount(T & ~U))
                acc += sign * marginal_predict_rows(tree, U, X, rule, ratios)
            if S == 0:
                intercept += float(acc[0])
            else:
                _accumulate(comps, S, acc)
    return _finish(ensemble, intercept, comps, n)


def mobius_columns(values: np.ndarray) -> np.ndarray:
    """Signed subset sums over the columns of a ``n x 2**k`` matrix.

    Column ``u`` of ``values`` is the marginal with local subset ``u``
    integrated out. Returns ``g`` with ``g[:, s] = sum_{v subset of s}
    (-1)^{|s|-|v|} values[:, full ^ v]``.
    """
    return np.ascontiguousarray(mobius_rows(np.asarray(values, dtype=np.float64).T).T)


def mobius_rows(table: np.ndarray) -> np.ndarray:
    """:func:`mobius_columns` on the transposed ``2**k x n`` layout."""
    width, n = table.shape
    k = width.bit_length() - 1
    # complementing every subset reverses the order; the butterfly below then
    # takes differences along one bit at a time
    g = np.array(table[::-1])
    for b in range(k):
        view = g.reshape(width >> (b + 1), 2, 1 << b, n)
        view[:, 1] -= view[:, 0]
    return g


def decompose_fast(ensemble: TreeEnsemble, X, threads: int = 1) -> ComponentStore:
    """Decompose with one matrix recursion per tree and a signed column sum.

    With ``threads > 1`` trees are processed by a thread pool; per-tree
    results are still merged in tree order, so the output does not depend
    on the schedule.
    """
    X = check_rows(X, ensemble.n_features)
    n = X.shape[0]
    rule = ensemble.comparison_rule
    cap = max_depth_cap()

    def one(tree):
        features, table = subset_table(tree, X, rule, cap)
        return features, mobius_rows(table)

    if threads > 1 and ensemble.n_trees > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = pool.map(one, ensemble.trees)
            return _merge(ensemble, parts, n)
    return _merge(ensemble, map(one, ensemble.trees), n)


def _merge(ensemble, parts, n):
    intercept = float(ensemble.base_offset)
    comps: dict[int, np.ndarray] = {}
    for features, g in parts:
        intercept += float(g[0, 0])
        for s in range(1, g.shape[0]):
            _accumulate(comps, bitset.expand(s, features), g[s])
    return _finish(ensemble, intercept, comps, n)


ALGORITHMS = ("fast", "naive", "grid")


def decompose(ensemble: TreeEnsemble, X, algorithm: str = "fast", threads: int = 1,
              background=None) -> ComponentStore:
    """Dispatch to one of the engines.

    ``fast`` and ``naive`` use the trees' coverage statistics as the
    marginalization measure; ``grid`` re-encodes the trees on their split
    grids and integrates against the empirical distribution of
    ``background`` (``X`` by default).
    """
    if algorithm == "fast":
        return decompose_fast(ensemble, X, threads)
    if algorithm == "naive":
        return decompose_naive(ensemble, X)
    if algorithm == "grid":
        return decompose_empirical(ensemble, X, background)
    raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {', '.join(ALGORITHMS)}")


# -- grid representation ------------------------------------------------------

@dataclass
class GridTerm:
    """Piecewise-constant function of the features in ``subset``.

    ``values`` has one axis per feature of ``subset`` in ascending index
    order; entry ``(c_1, ..., c_s)`` is the value on the cell whose lower
    corner is ``(G[k_1][c_1], ..., G[k_s][c_s])``. ``grids`` optionally
    replaces the ensemble-wide breakpoints for this term.
    """

    subset: int
    tree: int
    values: np.ndarray
    grids: dict[int, np.ndarray] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.grids is not None:
            self.grids = {int(k): np.asarray(g, dtype=np.float64) for k, g in self.grids.items()}


def _check_grid(k, g):
    if g.ndim != 1 or len(g) == 0 or np.any(np.diff(g) <= 0):
        raise ValueError(f"grid for feature {k} must be non-empty and strictly increasing")


@dataclass
class GridEnsemble:
    grids: dict[int, np.ndarray]
    terms: list[GridTerm]
    n_features: int
    feature_names: list[str] = field(default_factory=list)
    n_trees: int | None = None

    def __post_init__(self):
        self.grids = {int(k): np.asarray(g, dtype=np.float64) for k, g in self.grids.items()}
        if not self.feature_names:
            self.feature_names = [f"x{k}" for k in range(self.n_features)]
        if self.n_trees is None:
            self.n_trees = len({t.tree for t in self.terms}) or 1
        for k, g in self.grids.items():
            _check_grid(k, g)
        for term in self.terms:
            feats = bitset.to_indices(term.subset)
            if term.grids is not None:
                for k, g in term.grids.items():
                    _check_grid(k, g)
            grids = self.term_grids(term)
            missing = [k for k in feats if k not in grids]
            if missing:
                raise ValueError(f"no grid for features {missing}")
            shape = tuple(len(grids[k]) for k in feats)
            if term.values.shape != shape:
                raise ValueError(
                    f"term over {feats} has shape {term.values.shape}, grid implies {shape}"
                )

    def term_grids(self, term: GridTerm) -> dict[int, np.ndarray]:
        return self.grids if term.grids is None else term.grids

    def cells(self, X: np.ndarray, k: int) -> np.ndarray:
        return cell_index(self.grids[k], X[:, k], k)

    def predict(self, X) -> np.ndarray:
        X = check_rows(X, self.n_features)
        out = np.zeros(X.shape[0])
        for term in self.terms:
            grids = self.term_grids(term)
            feats = bitset.to_indices(term.subset)
            idx = tuple(cell_index(grids[k], X[:, k], k) for k in feats)
            out += term.values[idx] if feats else term.values
        return out / self.n_trees


def cell_index(grid: np.ndarray, x: np.ndarray, k: int = 0) -> np.ndarray:
    """Cell containing each value; cell ``c`` starts at ``grid[c]``."""
    idx = np.searchsorted(grid, x, side="right") - 1
    if np.any(idx < 0):
        raise ValueError(f"feature {k}: data below the first grid breakpoint {grid[0]}")
    return idx


def _cell_counts(X, feats, grids):
    shape = tuple(len(grids[k]) for k in feats)
    idx = tuple(cell_index(grids[k], X[:, k], k) for k in feats)
    flat = np.ravel_multi_index(idx, shape)
    counts = np.bincount(flat, minlength=int(np.prod(shape)))
    return (counts / X.shape[0]).reshape(shape)


class EmpiricalDensity:
    """Cell probabilities for feature subsets.

    ``weights[U]`` has one axis per feature of ``U`` (ascending) over the
    ensemble-wide grids; the empty subset maps to the scalar 1. A density
    built with :meth:`from_data` also answers queries on other grids by
    counting the stored rows.
    """

    def __init__(self, weights: Mapping[int, np.ndarray], data: np.ndarray | None = None):
        self.weights = {int(U): np.asarray(w, dtype=np.float64) for U, w in weights.items()}
        self.weights.setdefault(0, np.array(1.0))
        self.data = data
        self._cache: dict = {}
        for U, w in self.weights.items():
            self._check(U, w)

    @staticmethod
    def _check(U, w):
        if w.ndim != bitset.popcount(U):
            raise ValueError(f"density for subset {bitset.to_indices(U)} has {w.ndim} axes")
        if np.any(w < 0) or abs(float(w.sum()) - 1.0) > 1e-12:
            raise ValueError(
                f"density for subset {bitset.to_indices(U)} must be non-negative and sum to 1"
            )

    @classmethod
    def from_data(cls, X, grids: Mapping[int, Sequence[float]] | None = None,
                  subsets: Iterable[int] = ()) -> "EmpiricalDensity":
        X = check_rows(X)
        grids = {int(k): np.asarray(g, dtype=np.float64) for k, g in (grids or {}).items()}
        weights = {}
        for U in set(int(s) for s in subsets):
            feats = bitset.to_indices(U)
            missing = [k for k in feats if k not in grids]
            if missing:
                raise ValueError(f"no grid for features {missing}")
            weights[U] = _cell_counts(X, feats, grids) if feats else np.array(1.0)
        return cls(weights, data=X)

    def __getitem__(self, U: int) -> np.ndarray:
        try:
            return self.weights[U]
        except KeyError:
            raise ValueError(f"density has no weights for subset {bitset.to_indices(U)}") from None

    def on_grids(self, U: int, grids: Mapping[int, np.ndarray], shared: bool) -> np.ndarray:
        """Weights of ``U`` over ``grids``; ``shared`` marks the ensemble-wide grids."""
        if U == 0:
            return self.weights[0]
        if shared and U in self.weights:
            return self.weights[U]
        if self.data is None:
            raise ValueError(f"density has no weights for subset {bitset.to_indices(U)}")
        feats = bitset.to_indices(U)
        key = (U,) + tuple(grids[k].tobytes() for k in feats)
        if key not in self._cache:
            self._cache[key] = _cell_counts(self.data, feats, grids)
        return self._cache[key]


def estimate_density(X, grids: Mapping[int, Sequence[float]],
                     subsets: Iterable[int]) -> EmpiricalDensity:
    """Share of rows falling into each grid hyperrectangle, per subset."""
    return EmpiricalDensity.from_data(X, grids, set(subsets) | {0})


def required_subsets(G: GridEnsemble) -> set[int]:
    return {U for term in G.terms for U in bitset.submasks(term.subset)}


def decompose_grid(G: GridEnsemble, density: EmpiricalDensity, X) -> ComponentStore:
    """Decompose a grid ensemble against an empirical cell density.

    Each term ``(T, b)`` is integrated over every ``U`` subset of ``T`` once
    per row; the result is added with sign ``(-1)^{|S|-|T\\U|}`` to all
    ``S`` between ``T \\ U`` and ``T``. Components are averaged over trees.
    """
    X = check_rows(X, G.n_features)
    n = X.shape[0]
    sums: dict[int, np.ndarray] = {}
    shared_cells = {}
    for term in G.terms:
        T = term.subset
        feats = bitset.to_indices(T)
        grids = G.term_grids(term)
        shared = term.grids is None
        if shared:
            for k in feats:
                if k not in shared_cells:
                    shared_cells[k] = cell_index(grids[k], X[:, k], k)
            cells = shared_cells
        else:
            cells = {k: cell_index(grids[k], X[:, k], k) for k in feats}
        for U in bitset.submasks(T):
            kept = [p for p, k in enumerate(feats) if not U >> k & 1]
            summed = [p for p, k in enumerate(feats) if U >> k & 1]
            arr = np.transpose(term.values, kept + summed)
            if kept:
                arr = arr[tuple(cells[feats[p]] for p in kept)]
            else:
                arr = np.broadcast_to(arr, (n,) + arr.shape)
            if summed:
                p_u = density.on_grids(U, grids, shared)
                update = np.tensordot(arr, p_u, axes=p_u.ndim)
            else:
                update = np.array(arr)
            rest = T & ~U
            base = bitset.popcount(rest)
            for W in bitset.submasks(U):
                S = rest | W
                sign = bitset.mobius_sign(bitset.popcount(S), base)
                _accumulate(sums, S, sign * update)
    B = G.n_trees
    const = sums.pop(0, None)
    intercept = float(const[0]) / B if const is not None else 0.0
    comps = {S: v / B for S, v in sums.items()}
    return ComponentStore(intercept, comps, n, G.n_features, list(G.feature_names))


def grid_points(G: GridEnsemble) -> np.ndarray:
    """One row per combination of cell corners over all gridded features."""
    feats = sorted(G.grids)
    rows = np.zeros((int(np.prod([len(G.grids[k]) for k in feats])), G.n_features))
    for r, combo in enumerate(itertools.product(*(G.grids[k] for k in feats))):
        rows[r, feats] = combo
    return rows


def verify_identification(G: GridEnsemble, store: ComponentStore,
                          density: EmpiricalDensity, S: int, X) -> float:
    """Largest marginal-identification residual for subset ``S``.

    For every row, integrates the components that intersect ``S`` over the
    ``S`` coordinates against the density of ``S``. The store must have been
    computed on rows covering every cell combination of the ensemble-wide
    grids (see :func:`grid_points`).
    """
    if S == 0:
        return 0.0
    X = check_rows(X, G.n_features)
    feats = sorted(G.grids)
    s_feats = bitset.to_indices(S)
    if any(k not in G.grids for k in s_feats):
        raise ValueError("every feature of S needs a grid")
    cells = np.stack([G.cells(X, k) for k in feats], axis=1)
    lookup = {tuple(c): i for i, c in enumerate(cells.tolist())}
    partial = np.zeros(store.n_rows)
    for T, vals in store.components.items():
        if T & S:
            partial += vals
    p_s = density.on_grids(S, G.grids, True)
    s_pos = [feats.index(k) for k in s_feats]
    worst = 0.0
    for i in range(store.n_rows):
        base = list(cells[i])
        resid = 0.0
        for combo in itertools.product(*(range(len(G.grids[k])) for k in s_feats)):
            for p, c in zip(s_pos, combo):
                base[p] = c
            j = lookup.get(tuple(base))
            if j is None:
                raise ValueError("store rows do not cover every grid cell combination")
            resid += p_s[combo] * partial[j]
        worst = max(worst, abs(resid))
    return worst


def grid_from_ensemble(ensemble: TreeEnsemble) -> GridEnsemble:
    """Exact grid encoding of a tree ensemble, one term per tree.

    Each tree keeps its own breakpoints: its split thresholds (nudged up for
    ``le`` splits so a value equal to a threshold stays in the lower cell)
    below an open first cell starting at ``-inf``. The booster offset becomes
    a constant term. The terms are summed, not averaged.
    """
    rule = ensemble.comparison_rule
    terms = []
    for b, tree in enumerate(ensemble.trees):
        check_depth(tree)
        feats = tree.features
        if not feats:
            terms.append(GridTerm(0, b, np.array(tree.value[tree.root])))
            continue
        internal = tree.left >= 0
        grids, reps = {}, {}
        for k in feats:
            pts = np.unique(tree.threshold[internal & (tree.feature == k)])
            if rule == "le":
                pts = np.nextafter(pts, np.inf)
            grids[k] = np.concatenate([[-np.inf], pts])
            reps[k] = np.concatenate([[pts[0] - 1.0], pts])
        shape = tuple(len(grids[k]) for k in feats)
        corners = np.zeros((int(np.prod(shape)), ensemble.n_features))
        for r, combo in enumerate(itertools.product(*(reps[k] for k in feats))):
            corners[r, feats] = combo
        vals = tree_predict(tree, corners, rule).reshape(shape)
        terms.append(GridTerm(tree.feature_set, b, vals, grids))
    if ensemble.base_offset:
        terms.append(GridTerm(0, -1, np.array(float(ensemble.base_offset))))
    return GridEnsemble({}, terms, ensemble.n_features, list(ensemble.feature_names),
                        n_trees=1)


def decompose_empirical(ensemble: TreeEnsemble, X, background=None) -> ComponentStore:
    """Decompose a tree ensemble against the empirical distribution of ``background``.

    Runs the grid algorithm on :func:`grid_from_ensemble`; the density counts
    ``background`` rows (``X`` itself by default) in each tree's cells, so
    marginals use the data's marginal distribution instead of the trees'
    coverage statistics.
    """
    X = check_rows(X, ensemble.n_features)
    background = X if background is None else check_rows(background, ensemble.n_features)
    density = EmpiricalDensity({}, data=background)
    return decompose_grid(grid_from_ensemble(ensemble), density, X)
