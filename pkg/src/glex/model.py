"""Tree-ensemble representation, parsing, validation and prediction."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import bitset
from ._validation import ModelError, check_row, check_rows

COVER_RTOL = 1e-6
RULES = ("lt", "le")

_RULE_ALIASES = {
    "lt": "lt",
    "less-than": "lt",
    "<": "lt",
    "le": "le",
    "less-or-equal": "le",
    "<=": "le",
}


@dataclass
class Tree:
    """A binary regression tree stored as parallel node arrays.

    Leaves have ``left == right == -1`` and ``feature == -1``. ``cover`` holds
    the number (or weight) of training rows that passed through each node.
    """

    left: np.ndarray
    right: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    root: int = 0

    def __post_init__(self):
        self.left = np.asarray(self.left, dtype=np.int64)
        self.right = np.asarray(self.right, dtype=np.int64)
        self.feature = np.asarray(self.feature, dtype=np.int64)
        self.threshold = np.asarray(self.threshold, dtype=np.float64)
        self.value = np.asarray(self.value, dtype=np.float64)
        self.cover = np.asarray(self.cover, dtype=np.float64)
        self.root = int(self.root)

    @property
    def n_nodes(self) -> int:
        return len(self.left)

    def is_leaf(self, node: int) -> bool:
        return self.left[node] < 0

    @property
    def features(self) -> list[int]:
        """Sorted distinct split features."""
        internal = self.left >= 0
        return sorted(set(int(f) for f in self.feature[internal]))

    @property
    def feature_set(self) -> int:
        return bitset.from_indices(self.features)

    @property
    def depth(self) -> int:
        best = 0
        stack = [(self.root, 0)]
        while stack:
            node, level = stack.pop()
            if self.left[node] < 0:
                best = max(best, level)
            else:
                stack.append((int(self.left[node]), level + 1))
                stack.append((int(self.right[node]), level + 1))
        return best

    @classmethod
    def leaf(cls, value: float, cover: float = 1.0) -> "Tree":
        return cls([-1], [-1], [-1], [0.0], [value], [cover])

    def scaled(self, factor: float) -> "Tree":
        """Copy with every leaf value multiplied by ``factor``."""
        return Tree(self.left.copy(), self.right.copy(), self.feature.copy(),
                    self.threshold.copy(), self.value * factor, self.cover.copy(), self.root)


@dataclass
class TreeEnsemble:
    """Additive ensemble: ``base_offset + sum(tree(x) for tree in trees)``."""

    trees: list[Tree]
    n_features: int
    base_offset: float = 0.0
    feature_names: list[str] = field(default_factory=list)
    comparison_rule: str = "lt"

    def __post_init__(self):
        self.comparison_rule = _normalize_rule(self.comparison_rule)
        if not self.feature_names:
            self.feature_names = [f"x{k}" for k in range(self.n_features)]
        self.feature_names = [str(s) for s in self.feature_names]

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def max_depth(self) -> int:
        return max((t.depth for t in self.trees), default=0)

    @property
    def max_interaction(self) -> int:
        return max((len(t.features) for t in self.trees), default=0)

    def goes_left(self, values, threshold):
        if self.comparison_rule == "lt":
            return values < threshold
        return values <= threshold

    def predict(self, X) -> np.ndarray:
        return predict(self, X)

    def subset(self, index: int, base_offset: float = 0.0) -> "TreeEnsemble":
        """Single-tree ensemble holding tree ``index``."""
        return TreeEnsemble([self.trees[index]], self.n_features, base_offset,
                            list(self.feature_names), self.comparison_rule)

    def fingerprint(self) -> str:
        payload = json.dumps(to_native(self), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()


def _normalize_rule(rule: str) -> str:
    try:
        return _RULE_ALIASES[str(rule).strip().lower()]
    except KeyError:
        raise ModelError(f"unknown comparison_rule {rule!r}") from None


# -- prediction ---------------------------------------------------------------

def tree_predict(tree: Tree, X: np.ndarray, rule: str = "lt") -> np.ndarray:
    """Leaf values reached by routing each row of ``X`` through ``tree``."""
    n = X.shape[0]
    node = np.full(n, tree.root, dtype=np.int64)
    rows = np.arange(n)
    active = tree.left[node] >= 0
    while active.any():
        idx = rows[active]
        cur = node[idx]
        x = X[idx, tree.feature[cur]]
        thr = tree.threshold[cur]
        left = x < thr if rule == "lt" else x <= thr
        node[idx] = np.where(left, tree.left[cur], tree.right[cur])
        active[idx] = tree.left[node[idx]] >= 0
    return tree.value[node]


def predict(ensemble: TreeEnsemble, X) -> np.ndarray | float:
    """Evaluate the ensemble on a single row or on a matrix of rows."""
    if np.ndim(X) == 1:
        x = check_row(X, ensemble.n_features)
        return float(predict(ensemble, x[None, :])[0])
    X = check_rows(X, ensemble.n_features)
    out = np.full(X.shape[0], ensemble.base_offset, dtype=np.float64)
    for tree in ensemble.trees:
        out += tree_predict(tree, X, ensemble.comparison_rule)
    return out


# -- validation ---------------------------------------------------------------

def _tree_violations(tree: Tree, b: int, d: int) -> list[str]:
    out = []
    m = tree.n_nodes
    if m == 0:
        return [f"tree {b}: no nodes"]
    arrays = (tree.right, tree.feature, tree.threshold, tree.value, tree.cover)
    if any(len(a) != m for a in arrays):
        return [f"tree {b}: node arrays have inconsistent lengths"]
    if not 0 <= tree.root < m:
        return [f"tree {b}: root {tree.root} out of range"]

    parents = np.zeros(m, dtype=np.int64)
    for node in range(m):
        l, r = int(tree.left[node]), int(tree.right[node])
        if (l < 0) != (r < 0):
            out.append(f"tree {b} node {node}: exactly one child is missing")
            continue
        if l < 0:
            continue
        for child in (l, r):
            if not 0 <= child < m:
                out.append(f"tree {b} node {node}: child index {child} out of range")
            else:
                parents[child] += 1
    if out:
        return out
    if parents[tree.root] != 0:
        out.append(f"tree {b}: root {tree.root} has a parent (cycle)")
    for node in range(m):
        if node != tree.root and parents[node] != 1:
            out.append(f"tree {b} node {node}: has {parents[node]} parents, expected 1")
    if out:
        return out
    seen = np.zeros(m, dtype=bool)
    stack = [tree.root]
    while stack:
        node = stack.pop()
        if seen[node]:
            out.append(f"tree {b} node {node}: reached twice (cycle)")
            return out
        seen[node] = True
        if tree.left[node] >= 0:
            stack.extend((int(tree.left[node]), int(tree.right[node])))
    for node in np.flatnonzero(~seen):
        out.append(f"tree {b} node {int(node)}: unreachable from root")

    for node in range(m):
        cover = float(tree.cover[node])
        if not (math.isfinite(cover) and cover > 0):
            out.append(f"tree {b} node {node}: cover {cover} must be positive")
        if tree.left[node] < 0:
            if not math.isfinite(float(tree.value[node])):
                out.append(f"tree {b} node {node}: leaf value is not finite")
            continue
        f = int(tree.feature[node])
        if not 0 <= f < d:
            out.append(f"tree {b} node {node}: feature index {f} outside [0, {d})")
        if not math.isfinite(float(tree.threshold[node])):
            out.append(f"tree {b} node {node}: threshold is not finite")
        child_sum = float(tree.cover[tree.left[node]] + tree.cover[tree.right[node]])
        if abs(child_sum - cover) > COVER_RTOL * max(abs(cover), 1e-300):
            out.append(
                f"tree {b} node {node}: cover {cover:g} != children cover sum {child_sum:g}"
            )
    return out


def validate(ensemble: TreeEnsemble) -> list[str]:
    """Return a list of human-readable invariant violations (empty if valid)."""
    out = []
    d = ensemble.n_features
    if not 1 <= d <= bitset.MAX_FEATURES:
        out.append(f"feature count {d} outside [1, {bitset.MAX_FEATURES}]")
    if ensemble.n_trees < 1:
        out.append("ensemble has no trees")
    if len(ensemble.feature_names) != d:
        out.append(f"{len(ensemble.feature_names)} feature names for {d} features")
    elif len(set(ensemble.feature_names)) != d:
        out.append("feature names are not unique")
    if not math.isfinite(float(ensemble.base_offset)):
        out.append("base_offset is not finite")
    for b, tree in enumerate(ensemble.trees):
        out.extend(_tree_violations(tree, b, d))
    return out


def check_ensemble(ensemble: TreeEnsemble) -> TreeEnsemble:
    problems = validate(ensemble)
    if problems:
        raise ModelError("; ".join(problems))
    return ensemble


# -- native format ------------------------------------------------------------

def to_native(ensemble: TreeEnsemble) -> dict:
    trees = []
    for tree in ensemble.trees:
        nodes = []
        for i in range(tree.n_nodes):
            if tree.left[i] < 0:
                nodes.append({"leaf": float(tree.value[i]), "cover": float(tree.cover[i])})
            else:
                nodes.append({
                    "feature": int(tree.feature[i]),
                    "threshold": float(tree.threshold[i]),
                    "left": int(tree.left[i]),
                    "right": int(tree.right[i]),
                    "cover": float(tree.cover[i]),
                })
        trees.append({"root": tree.root, "nodes": nodes})
    return {
        "version": 1,
        "d": ensemble.n_features,
        "feature_names": list(ensemble.feature_names),
        "base_offset": float(ensemble.base_offset),
        "comparison_rule": ensemble.comparison_rule,
        "trees": trees,
    }


def serialize(ensemble: TreeEnsemble) -> str:
    return json.dumps(to_native(ensemble), indent=1)


def _number(obj, key, where):
    if key not in obj:
        raise ModelError(f"{where}: missing {key!r}")
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ModelError(f"{where}: {key!r} must be a number")
    return val


def parse_native_model(text: str | dict, check: bool = True) -> TreeEnsemble:
    """Parse the versioned native JSON model document.

    With ``check=False`` structural invariants are left to :func:`validate`.
    """
    doc = _load_json(text)
    if not isinstance(doc, dict):
        raise ModelError("native model must be a JSON object")
    if doc.get("version") != 1:
        raise ModelError(f"unsupported model version {doc.get('version')!r}")
    d = _number(doc, "d", "model")
    if not isinstance(d, int):
        raise ModelError("model: 'd' must be an integer")
    names = doc.get("feature_names") or [f"x{k}" for k in range(d)]
    if not isinstance(names, list):
        raise ModelError("model: 'feature_names' must be a list")
    base = float(doc.get("base_offset", 0.0))
    rule = doc.get("comparison_rule", "lt")
    raw_trees = doc.get("trees")
    if not isinstance(raw_trees, list):
        raise ModelError("model: 'trees' must be a list")

    trees = []
    for b, raw in enumerate(raw_trees):
        if not isinstance(raw, dict) or not isinstance(raw.get("nodes"), list):
            raise ModelError(f"tree {b}: expected an object with a 'nodes' list")
        m = len(raw["nodes"])
        left = np.full(m, -1, dtype=np.int64)
        right = np.full(m, -1, dtype=np.int64)
        feature = np.full(m, -1, dtype=np.int64)
        threshold = np.zeros(m)
        value = np.zeros(m)
        cover = np.zeros(m)
        for i, node in enumerate(raw["nodes"]):
            where = f"tree {b} node {i}"
            if not isinstance(node, dict):
                raise ModelError(f"{where}: expected an object")
            cover[i] = _number(node, "cover", where)
            if "leaf" in node:
                value[i] = _number(node, "leaf", where)
            else:
                feature[i] = _number(node, "feature", where)
                threshold[i] = _number(node, "threshold", where)
                left[i] = _number(node, "left", where)
                right[i] = _number(node, "right", where)
        root = raw.get("root", 0)
        if isinstance(root, bool) or not isinstance(root, int):
            raise ModelError(f"tree {b}: 'root' must be an integer")
        trees.append(Tree(left, right, feature, threshold, value, cover, root))
    ens = TreeEnsemble(trees, d, base, names, rule)
    return check_ensemble(ens) if check else ens


# -- booster dump format ------------------------------------------------------

def _load_json(text):
    if isinstance(text, (dict, list)):
        return text
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"malformed JSON: {exc}") from None


def _feature_index(name, lookup):
    if lookup is not None:
        if name not in lookup:
            raise ModelError(f"split feature {name!r} not in the declared feature list")
        return lookup[name]
    name = str(name)
    if name.startswith("f") and name[1:].isdigit():
        return int(name[1:])
    raise ModelError(f"cannot map split feature {name!r} without a feature list")


def _flatten_dump(obj, b, lookup):
    left, right, feature, threshold, value, cover = [], [], [], [], [], []
    stack = [(obj, -1, None)]
    while stack:
        node, parent, side = stack.pop()
        if not isinstance(node, dict):
            raise ModelError(f"tree {b}: node is not an object")
        where = f"tree {b} nodeid {node.get('nodeid', '?')}"
        if "cover" not in node:
            raise ModelError(f"{where}: missing cover statistic (dump with statistics required)")
        i = len(left)
        if parent >= 0:
            (left if side == "yes" else right)[parent] = i
        cover.append(float(_number(node, "cover", where)))
        if "leaf" in node:
            left.append(-1)
            right.append(-1)
            feature.append(-1)
            threshold.append(0.0)
            value.append(float(_number(node, "leaf", where)))
            continue
        for key in ("split", "split_condition", "yes", "no", "children"):
            if key not in node:
                raise ModelError(f"{where}: missing {key!r}")
        kids = {c.get("nodeid"): c for c in node["children"] if isinstance(c, dict)}
        yes, no = node["yes"], node["no"]
        if yes not in kids or no not in kids:
            raise ModelError(f"{where}: yes/no do not reference its children")
        missing = node.get("missing")
        if missing is not None and missing not in (yes, no):
            raise ModelError(f"{where}: separate missing-value branch is not supported")
        left.append(-1)
        right.append(-1)
        feature.append(_feature_index(node["split"], lookup))
        threshold.append(float(_number(node, "split_condition", where)))
        value.append(0.0)
        stack.append((kids[no], i, "no"))
        stack.append((kids[yes], i, "yes"))
    return Tree(left, right, feature, threshold, value, cover, 0)


def parse_booster_dump(text, feature_names: Sequence[str] | None = None,
                       base_offset: float = 0.0,
                       n_features: int | None = None, check: bool = True) -> TreeEnsemble:
    """Parse a booster JSON dump (with statistics) into an ensemble.

    Splits route left when the value is strictly below the threshold. Feature
    names map through ``feature_names``; without a list, names of the form
    ``f<k>`` are read as column indices.
    """
    doc = _load_json(text)
    if isinstance(doc, dict) and "trees" in doc:
        base_offset = float(doc.get("base_score", doc.get("base_offset", base_offset)))
        feature_names = doc.get("feature_names", feature_names)
        doc = doc["trees"]
    if not isinstance(doc, list):
        raise ModelError("booster dump must be a JSON array of trees")
    lookup = None
    if feature_names is not None:
        feature_names = [str(s) for s in feature_names]
        lookup = {name: k for k, name in enumerate(feature_names)}
    trees = [_flatten_dump(obj, b, lookup) for b, obj in enumerate(doc)]
    if feature_names is not None:
        d = len(feature_names)
    elif n_features is not None:
        d = n_features
    else:
        d = 1 + max((max(t.features, default=-1) for t in trees), default=0)
        d = max(d, 1)
    names = list(feature_names) if feature_names is not None else [f"f{k}" for k in range(d)]
    ens = TreeEnsemble(trees, d, base_offset, names, "lt")
    return check_ensemble(ens) if check else ens


def load_model(path: str, feature_names: Sequence[str] | None = None,
               base_offset: float | None = None, check: bool = True) -> TreeEnsemble:
    """Read either format from disk, sniffing the top-level JSON type."""
    with open(path) as fh:
        doc = _load_json(fh.read())
    if isinstance(doc, dict) and doc.get("version") is not None:
        ens = parse_native_model(doc, check)
        if base_offset is not None:
            ens.base_offset = float(base_offset)
        return ens
    return parse_booster_dump(doc, feature_names, base_offset or 0.0, check=check)


# -- datasets -----------------------------------------------------------------

@dataclass
class Dataset:
    values: np.ndarray
    column_names: list[str]

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.column_names.index(name)]


def read_csv(path: str, drop: Sequence[str] = ()) -> Dataset:
    """Read a headed numeric CSV; empty or non-numeric cells are rejected."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            try:
                rows.append([float(cell) for cell in row])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: missing or non-numeric cell") from None
    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    if not np.isfinite(values).all():
        raise ValueError(f"{path}: non-finite values")
    keep = [i for i, h in enumerate(header) if h not in set(drop)]
    return Dataset(values[:, keep], [header[i] for i in keep])


def write_csv(path: str, data: Dataset, extra: dict[str, np.ndarray] | None = None):
    extra = extra or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(data.column_names) + list(extra))
        cols = [data.values[:, j] for j in range(data.d)] + list(extra.values())
        for i in range(data.n):
            w.writerow([repr(float(c[i])) for c in cols])
