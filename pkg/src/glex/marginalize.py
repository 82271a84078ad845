"""Coverage-weighted marginalization of single trees.

For a tree and a set ``U`` of features, the marginalized prediction averages
the tree over the features in ``U`` using the node coverage ratios as the
measure, while routing the remaining features by the observation's values.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import bitset
from ._validation import DepthCapError, check_rows, max_depth_cap
from .model import Tree


def coverage_ratios(tree: Tree) -> tuple[np.ndarray, np.ndarray]:
    """Per-node share of coverage sent left and right (zero at leaves)."""
    internal = tree.left >= 0
    cl = np.zeros(tree.n_nodes)
    cr = np.zeros(tree.n_nodes)
    parent = tree.cover[internal]
    cl[internal] = tree.cover[tree.left[internal]] / parent
    cr[internal] = tree.cover[tree.right[internal]] / parent
    return cl, cr


def check_depth(tree: Tree, cap: int | None = None) -> None:
    """Refuse trees deeper than ``cap`` or splitting on more than ``cap`` features.

    Both bound the ``2**k`` subset columns a tree needs.
    """
    cap = max_depth_cap() if cap is None else cap
    depth = tree.depth
    if depth > cap:
        raise DepthCapError(
            f"tree depth {depth} exceeds the depth cap of {cap} (set GLEX_MAX_DEPTH to raise it)"
        )
    k = len(tree.features)
    if k > cap:
        raise DepthCapError(
            f"tree splits on {k} features, more than the depth cap of {cap} "
            "(set GLEX_MAX_DEPTH to raise it)"
        )


def _go_left(value, threshold, rule):
    return value < threshold if rule == "lt" else value <= threshold


def marginal_predict(tree: Tree, U: int, x, rule: str = "lt") -> float:
    """Marginalized prediction of ``tree`` at a single point ``x``.

    Features in the bitmask ``U`` are integrated out with the coverage
    measure; features the tree never splits on are ignored.
    """
    x = np.asarray(x, dtype=np.float64)
    cl, cr = coverage_ratios(tree)

    def recurse(node):
        if tree.left[node] < 0:
            return float(tree.value[node])
        j = int(tree.feature[node])
        if U >> j & 1:
            return cl[node] * recurse(tree.left[node]) + cr[node] * recurse(tree.right[node])
        if _go_left(x[j], tree.threshold[node], rule):
            return recurse(tree.left[node])
        return recurse(tree.right[node])

    return recurse(tree.root)


def marginal_predict_rows(tree: Tree, U: int, X: np.ndarray, rule: str = "lt",
                          ratios=None) -> np.ndarray:
    """Row-vectorized version of :func:`marginal_predict` for one subset."""
    cl, cr = coverage_ratios(tree) if ratios is None else ratios
    out = np.empty(X.shape[0])

    def recurse(node, rows):
        if tree.left[node] < 0:
            return np.full(len(rows), tree.value[node])
        j = int(tree.feature[node])
        if U >> j & 1:
            return cl[node] * recurse(tree.left[node], rows) + cr[node] * recurse(
                tree.right[node], rows)
        res = np.empty(len(rows))
        mask = _go_left(X[rows, j], tree.threshold[node], rule)
        if mask.any():
            res[mask] = recurse(tree.left[node], rows[mask])
        if not mask.all():
            res[~mask] = recurse(tree.right[node], rows[~mask])
        return res

    out[:] = recurse(tree.root, np.arange(X.shape[0]))
    return out


@dataclass
class SubsetMatrix:
    """Marginalized predictions for every subset of one tree's features.

    ``values[i, u]`` holds the prediction for row ``i`` with the local subset
    ``u`` (a bitmask over positions in ``features``) integrated out.
    """

    features: list[int]
    values: np.ndarray

    @property
    def feature_set(self) -> int:
        return bitset.from_indices(self.features)

    def column(self, U: int) -> np.ndarray:
        """Column for a global bitmask; features outside the tree are ignored."""
        return self.values[:, bitset.compress(U, self.features)]


def marginal_predict_all(tree: Tree, X, rule: str = "lt",
                         depth_cap: int | None = None) -> SubsetMatrix:
    """Marginalized predictions for all subsets of the tree's features at once.

    One recursion fills an ``n x 2**k`` matrix. At a node splitting on
    feature ``j`` the columns whose subset contains ``j`` take the
    coverage-weighted sum of both children over all rows, the other columns
    take the child each row is routed to.
    """
    X = check_rows(X)
    features, table = subset_table(tree, X, rule, depth_cap)
    return SubsetMatrix(features, np.ascontiguousarray(table.T))


def subset_table(tree: Tree, X: np.ndarray, rule: str = "lt",
                 depth_cap: int | None = None) -> tuple[list[int], np.ndarray]:
    """Transposed form of :func:`marginal_predict_all`: a ``2**k x n`` table.

    ``X`` must already be a validated float array.
    """
    check_depth(tree, depth_cap)
    features = tree.features
    if features and X.shape[1] <= features[-1]:
        raise ValueError(
            f"X has {X.shape[1]} columns but the tree splits on feature {features[-1]}"
        )
    k = len(features)
    width = 1 << k
    n = X.shape[0]
    pos = {f: p for p, f in enumerate(features)}
    cl, cr = coverage_ratios(tree)

    # Node results are arrays of shape (2, ..., 2, rows) with one axis per
    # tree feature (axis 0 is the highest bit) and rows last, so slices along
    # a feature axis are contiguous blocks. Axes of features that do not occur
    # below the node keep length 1 and broadcast, as does the row axis of a
    # subtree without row-dependent routing.
    ones = (1,) * (k + 1)

    def half(m, axis, bit):
        if m.shape[axis] == 1:
            return m
        return m[(slice(None),) * axis + (slice(bit, bit + 1),)]

    def recurse(node):
        if tree.left[node] < 0:
            return np.full(ones, tree.value[node])
        left = recurse(tree.left[node])
        right = recurse(tree.right[node])
        j = int(tree.feature[node])
        axis = k - 1 - pos[j]
        routed = _go_left(X[:, j], tree.threshold[node], rule).reshape(ones[:-1] + (n,))
        shape = list(np.broadcast_shapes(left.shape, right.shape, routed.shape))
        shape[axis] = 2
        out = np.empty(shape)
        lo = (slice(None),) * axis
        np.copyto(out[lo + (slice(0, 1),)],
                  np.where(routed, half(left, axis, 0), half(right, axis, 0)))
        np.add(cl[node] * half(left, axis, 1), cr[node] * half(right, axis, 1),
               out=out[lo + (slice(1, 2),)])
        return out

    full = np.broadcast_to(recurse(tree.root), (2,) * k + (n,))
    return features, np.ascontiguousarray(full).reshape(width, n)
