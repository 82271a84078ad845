import itertools

import numpy as np
import pytest

from conftest import depth2_tree
from glex.decompose import (ComponentStore, EmpiricalDensity, GridEnsemble, GridTerm,
                            decompose_empirical, decompose_grid, decompose_naive,
                            estimate_density, grid_from_ensemble, grid_points,
                            required_subsets, verify_identification)
from glex.model import TreeEnsemble, predict
from glex.synth import random_ensemble, rng_for


def two_cell_model(values=(1.0, 3.0)):
    G = GridEnsemble({0: np.array([0.0, 1.0])}, [GridTerm(0b1, 0, np.array(values))], 1)
    density = EmpiricalDensity({0b1: np.array([0.5, 0.5])})
    return G, density


def test_constant_term():
    G = GridEnsemble({0: np.array([0.0])}, [GridTerm(0b1, 0, np.array([3.0]))], 1)
    store = decompose_grid(G, EmpiricalDensity({0b1: np.array([1.0])}), np.array([[0.2], [5.0]]))
    assert store.intercept == 3.0
    assert np.all(store[0b1] == 0.0)


def test_two_equiprobable_cells():
    G, density = two_cell_model()
    store = decompose_grid(G, density, np.array([[0.5], [1.5]]))
    assert store.intercept == 2.0
    assert store[0b1].tolist() == [-1.0, 1.0]


def test_trees_are_averaged():
    G = GridEnsemble({0: np.array([0.0, 1.0])},
                     [GridTerm(0b1, 0, np.array([1.0, 3.0])), GridTerm(0b1, 1, np.array([3.0, 5.0]))],
                     1)
    store = decompose_grid(G, EmpiricalDensity({0b1: np.array([0.5, 0.5])}), np.array([[0.5]]))
    assert store.intercept == 3.0
    assert np.allclose(store.total(), G.predict(np.array([[0.5]])))


def depth2_grid():
    grids = {0: np.array([-10.0, 0.5]), 1: np.array([-10.0, 0.5])}
    term = GridTerm(0b11, 0, np.array([[0.0, 1.0], [2.0, 5.0]]))
    G = GridEnsemble(grids, [term], 2)
    density = EmpiricalDensity({
        0b11: np.full((2, 2), 0.25), 0b01: np.array([0.5, 0.5]), 0b10: np.array([0.5, 0.5])})
    return G, density


def test_grid_matches_tree_engine():
    G, density = depth2_grid()
    X = grid_points(G)
    store = decompose_grid(G, density, X)
    naive = decompose_naive(TreeEnsemble([depth2_tree()], 2), X)
    assert abs(store.intercept - naive.intercept) < 1e-10
    for S in (1, 2, 3):
        assert np.abs(store[S] - naive[S]).max() < 1e-10


def test_grid_errors():
    with pytest.raises(ValueError, match="strictly increasing"):
        GridEnsemble({0: np.array([1.0, 0.0])}, [], 1)
    with pytest.raises(ValueError, match="shape"):
        GridEnsemble({0: np.array([0.0, 1.0])}, [GridTerm(0b1, 0, np.zeros(3))], 1)
    with pytest.raises(ValueError, match="no grid"):
        GridEnsemble({}, [GridTerm(0b1, 0, np.zeros(1))], 1)
    G, _ = two_cell_model()
    with pytest.raises(ValueError, match="no weights"):
        decompose_grid(G, EmpiricalDensity({}), np.array([[0.5]]))
    with pytest.raises(ValueError, match="below"):
        decompose_grid(G, two_cell_model()[1], np.array([[-1.0]]))


def test_density_two_cells():
    X = np.array([[0.1], [0.2], [1.5], [1.7]])
    dens = estimate_density(X, {0: [0.0, 1.0]}, [0b1])
    assert dens[0b1].tolist() == [0.5, 0.5]
    assert float(dens[0]) == 1.0


def test_density_law_of_large_numbers():
    X = rng_for(0).uniform(0, 1, size=(1_000_000, 2))
    grid = np.linspace(0, 1, 11)[:-1]
    w = estimate_density(X, {0: grid, 1: grid}, [0b11])[0b11]
    assert w.shape == (10, 10)
    assert np.all(np.abs(w - 0.01) <= 0.002)


def test_density_validation():
    with pytest.raises(ValueError, match="sum to 1"):
        EmpiricalDensity({0b1: np.array([0.5, 0.6])})
    with pytest.raises(ValueError, match="axes"):
        EmpiricalDensity({0b11: np.array([0.5, 0.5])})
    with pytest.raises(ValueError, match="below"):
        estimate_density(np.array([[-1.0]]), {0: [0.0]}, [0b1])


def test_verify_identification():
    G, density = depth2_grid()
    X = grid_points(G)
    store = decompose_grid(G, density, X)
    assert verify_identification(G, store, density, 0b01, X) < 1e-10
    assert verify_identification(G, store, density, 0b10, X) < 1e-10
    assert verify_identification(G, store, density, 0b11, X) < 1e-10
    assert verify_identification(G, store, density, 0, X) == 0.0


def test_verify_identification_detects_perturbation():
    G, density = depth2_grid()
    X = grid_points(G)
    store = decompose_grid(G, density, X)
    comps = dict(store.components)
    comps[0b01] = comps[0b01] - 1.0
    bad = ComponentStore(store.intercept + 1.0, comps, store.n_rows, 2)
    assert np.allclose(bad.total(), store.total())
    assert verify_identification(G, bad, density, 0b01, X) == pytest.approx(1.0, abs=1e-12)
    assert verify_identification(G, bad, density, 0b10, X) < 1e-10


def test_required_subsets():
    G, _ = depth2_grid()
    assert required_subsets(G) == {0, 1, 2, 3}


def test_grid_from_ensemble_predicts_like_trees():
    rng = rng_for(12)
    for rule in ("lt", "le"):
        ens = random_ensemble(rng, 4, 10, 3, base_offset=0.7)
        ens.comparison_rule = rule
        G = grid_from_ensemble(ens)
        X = rng.standard_normal((200, 4))
        thr = ens.trees[0].threshold[ens.trees[0].left >= 0]
        X[:len(thr), ens.trees[0].feature[ens.trees[0].left >= 0]] = thr  # ties
        assert np.allclose(G.predict(X), predict(ens, X), atol=1e-12)


def test_empirical_decomposition_identified():
    rng = rng_for(13)
    ens = random_ensemble(rng, 3, 8, 3)
    bg = rng.standard_normal((60, 3))
    store = decompose_empirical(ens, bg)
    assert np.abs(store.total() - predict(ens, bg)).max() < 1e-9
    # marginal identification: for every S, the components meeting S average
    # to zero when the S coordinates run over the data (jointly) and the
    # remaining coordinates stay at an anchor row
    for anchor in bg[:3]:
        for S in range(1, 8):
            feats = [k for k in range(3) if S >> k & 1]
            rows = np.tile(anchor, (len(bg), 1))
            rows[:, feats] = bg[:, feats]
            probe = decompose_empirical(ens, rows, background=bg)
            partial = sum((v for T, v in probe.components.items() if T & S), np.zeros(len(bg)))
            assert abs(partial.mean()) < 1e-10


def test_empirical_matches_tree_engine_on_product_data():
    # data laid out on a full product grid of equal counts matches the
    # coverage measure of a tree whose covers are those counts
    ens = TreeEnsemble([depth2_tree()], 2)
    X = np.array(list(itertools.product([0.0, 1.0], [0.0, 1.0])))
    a, b = decompose_empirical(ens, X), decompose_naive(ens, X)
    assert abs(a.intercept - b.intercept) < 1e-12
    for S in (1, 2, 3):
        assert np.abs(a[S] - b[S]).max() < 1e-12
