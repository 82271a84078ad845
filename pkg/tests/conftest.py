import numpy as np
import pytest

from glex.model import Tree, TreeEnsemble
from glex.synth import random_ensemble, rng_for


def depth1_tree(threshold=0.5):
    # split f0 @ 0.5, covers 60/40, leaves 1.0 / 3.0
    return Tree([1, -1, -1], [2, -1, -1], [0, -1, -1], [threshold, 0, 0],
                [0.0, 1.0, 3.0], [100.0, 60.0, 40.0])


def depth2_tree(values=(0.0, 1.0, 2.0, 5.0), t0=0.5, t1=0.5, f0=0, f1=1):
    a, b, c, d = values
    return Tree(
        left=[1, 3, 5, -1, -1, -1, -1],
        right=[2, 4, 6, -1, -1, -1, -1],
        feature=[f0, f1, f1, -1, -1, -1, -1],
        threshold=[t0, t1, t1, 0, 0, 0, 0],
        value=[0, 0, 0, a, b, c, d],
        cover=[100, 50, 50, 25, 25, 25, 25],
    )


def general_ensemble(rng, d, n_trees, max_depth, split_prob=0.8, base_offset=0.0):
    """Random trees free to split on any feature at any node."""

    def grow(depth, nodes, cover):
        idx = len(nodes)
        nodes.append(None)
        if depth < max_depth and (depth == 0 or rng.random() < split_prob):
            share = rng.uniform(0.05, 0.95)
            l = grow(depth + 1, nodes, cover * share)
            r = grow(depth + 1, nodes, cover - cover * share)
            nodes[idx] = (l, r, int(rng.integers(d)), float(rng.normal()), 0.0, cover)
        else:
            nodes[idx] = (-1, -1, -1, 0.0, float(rng.normal()), cover)
        return idx

    trees = []
    for _ in range(n_trees):
        nodes = []
        grow(0, nodes, float(rng.uniform(10, 1000)))
        trees.append(Tree(*zip(*nodes), root=0))
    return TreeEnsemble(trees, d, base_offset)


@pytest.fixture
def tree1():
    return depth1_tree()


@pytest.fixture
def tree2():
    return depth2_tree()


@pytest.fixture
def ens2():
    return TreeEnsemble([depth2_tree()], 2)


@pytest.fixture
def random_model():
    rng = rng_for(7)
    return random_ensemble(rng, 6, 15, 4, base_offset=0.3), rng.standard_normal((60, 6))


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for key in sorted(results):
            terminalreporter.write_line(results[key])
