"""Acceptance criteria A1-A8.

Each test records one ``A<k> PASS|FAIL: ...`` line; the lines are printed in
the terminal summary (see conftest.py) and also when this file is run as a
script. All simulations use seed 0.
"""
import json
import time

import numpy as np
import pytest

from conftest import depth2_tree, general_ensemble
from glex import bitset
from glex.cli import main as cli_main
from glex.decompose import decompose_empirical, decompose_fast, decompose_naive
from glex.explain import (importance, marginalized_prediction, pdp, remove_features,
                          shap_bruteforce, shap_from_components)
from glex.model import TreeEnsemble, predict
from glex.synth import (BoostParams, SimSpec, fit_gbt, generate, random_ensemble,
                        refit_without, rng_for)

SEED = 0
RESULTS: dict[str, str] = {}


def report(key, ok, detail):
    line = f"{key} {'PASS' if ok else 'FAIL'}: {detail}"
    RESULTS[key] = line
    print(line)
    return ok


def within(value, target, tol):
    return abs(value - target) <= tol


@pytest.fixture(scope="module")
def interaction_fit():
    start = time.perf_counter()
    data, y = generate(SimSpec("interaction2d", 100_000, seed=SEED, corr=0.3))
    ens = fit_gbt(data, y, BoostParams(rounds=300, max_depth=2, learning_rate=0.1))
    X = data.values
    store = decompose_empirical(ens, X)
    shap = shap_from_components(store)
    elapsed = time.perf_counter() - start
    return X, ens, store, shap, elapsed


def _near_point(X, k=50):
    dist = np.hypot(X[:, 0] - 1.0, X[:, 1] + 0.7)
    return np.argsort(dist, kind="stable")[:k]


def _a1_numbers(X, store, shap):
    idx = _near_point(X)
    return (float(shap.values[idx, 0].mean()), float(store[0b01][idx].mean()),
            float(0.5 * store[0b11][idx].mean()))


def test_a1_shap_zero_point(interaction_fit):
    X, ens, store, shap, elapsed = interaction_fit
    phi1, m1, half = _a1_numbers(X, store, shap)
    # the same quantities under the trees' cover statistics, for the record
    cov = decompose_fast(ens, X)
    c_phi1, c_m1, c_half = _a1_numbers(X, cov, shap_from_components(cov))
    ok = (within(phi1, 0.0, 0.15) and within(m1, 0.4, 0.15) and within(half, -0.4, 0.15)
          and elapsed < 120)
    assert report(
        "A1", ok,
        f"50 rows nearest (1,-0.7): phi1={phi1:+.3f} (0+-0.15), m1={m1:+.3f} (0.4+-0.15), "
        f"m12/2={half:+.3f} (-0.4+-0.15), {elapsed:.1f}s (<120s), empirical measure "
        f"[cover measure: phi1={c_phi1:+.3f}, m1={c_m1:+.3f}, m12/2={c_half:+.3f}]")


def test_a2_closed_form_components(interaction_fit):
    X, ens, store, shap, _ = interaction_fit
    central = np.abs(X[:, 0]) <= 1.5
    rmse = float(np.sqrt(np.mean((store[0b01][central] - (X[central, 0] - 0.6)) ** 2)))
    cov = decompose_fast(ens, X)
    c_rmse = float(np.sqrt(np.mean((cov[0b01][central] - (X[central, 0] - 0.6)) ** 2)))
    ok = within(store.intercept, 0.6, 0.1) and rmse < 0.15
    assert report(
        "A2", ok,
        f"intercept={store.intercept:.4f} (0.6+-0.1), RMSE(m1, x1-0.6) on |x1|<=1.5 = "
        f"{rmse:.4f} (<0.15), empirical measure [cover measure: intercept="
        f"{cov.intercept:.4f}, RMSE={c_rmse:.4f}]")


def test_a3_debiasing_medians():
    start = time.perf_counter()
    data, y = generate(SimSpec("salary", 10_000, seed=SEED))
    X = data.values
    male = data.column("sex") == 1.0
    params = BoostParams(rounds=300, max_depth=2, learning_rate=0.1)
    ens = fit_gbt(data, y, params)

    def gap(v):
        return float(np.median(v[male]) - np.median(v[~male]))

    full = gap(predict(ens, X))
    refit = gap(predict(refit_without(data, y, params, 0b01), X))
    cover = gap(remove_features(decompose_fast(ens, X), 0b01).predict())
    empirical = gap(remove_features(decompose_empirical(ens, X), 0b01).predict())
    elapsed = time.perf_counter() - start
    ok = (within(full, 29.79, 2) and within(refit, 29.79, 2) and within(cover, 10.57, 2)
          and within(empirical, 10.57, 2) and elapsed < 60)
    assert report(
        "A3", ok,
        f"median gaps full={full:.2f}, refit={refit:.2f} (29.79+-2), decomposed cover="
        f"{cover:.2f} / empirical={empirical:.2f} (10.57+-2), {elapsed:.1f}s (<60s)")


def test_a4_importance_structure():
    data, y = generate(SimSpec("importance4d", 10_000, seed=SEED))
    ens = fit_gbt(data, y, BoostParams(rounds=300, max_depth=3, learning_rate=0.1))
    lines, ok = [], True
    for label, engine in (("cover", decompose_fast), ("empirical", decompose_empirical)):
        comp = importance(engine(ens, data.values)).component_importance
        imp = {S: comp.get(bitset.from_indices(k - 1 for k in S), 0.0)
               for S in [(1,), (2,), (3,), (4,), (2, 3), (2, 3, 4)]}
        mains = min(imp[(1,)], imp[(3,)])
        ok &= mains > 5 * max(imp[(2,)], imp[(4,)])
        ok &= min(imp[(2, 3)], imp[(2, 3, 4)]) > 3 * imp[(2,)]
        lines.append(f"{label}: " + ", ".join(
            f"{{{','.join(map(str, S))}}}={v:.3f}" for S, v in imp.items()))
    assert report("A4", ok, "; ".join(lines)
                  + " ({1},{3} > 5x {2},{4}; {2,3},{2,3,4} > 3x {2})")


def test_a5_oracle_equivalence():
    start = time.perf_counter()
    rng = rng_for(SEED, 5)
    worst = 0.0
    for _ in range(50):
        d = int(rng.integers(1, 9))
        ens = general_ensemble(rng, d, int(rng.integers(1, 21)), int(rng.integers(1, 5)),
                               base_offset=float(rng.normal()))
        ens.comparison_rule = "lt" if rng.random() < 0.5 else "le"
        X = rng.standard_normal((100, d))
        oracle = shap_bruteforce(ens, X)
        fast = shap_from_components(decompose_fast(ens, X))
        worst = max(worst, float(np.abs(oracle.values - fast.values).max()),
                    abs(oracle.phi0 - fast.phi0))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-9 and elapsed < 60
    assert report("A5", ok, f"50 ensembles (d<=8, B<=20, depth<=4, 100 rows): max |phi diff| = "
                            f"{worst:.2e} (<1e-9), {elapsed:.1f}s (<60s)")


def _a6_cases(rng, budget=3e6):
    # three corners of the allowed range, then random draws whose naive cost
    # (trees x 3^depth x rows) fits the budget
    cases = [(100, 6, 40), (100, 4, 1000), (10, 6, 1000)]
    while len(cases) < 50:
        B, depth, n = int(rng.integers(1, 101)), int(rng.integers(1, 7)), int(rng.integers(1, 1001))
        if B * 3**depth * n <= budget:
            cases.append((B, depth, n))
    return cases


def test_a6_algorithm_equivalence():
    start = time.perf_counter()
    rng = rng_for(SEED, 6)
    worst = 0.0
    for B, depth, n in _a6_cases(rng):
        d = int(rng.integers(depth, 13))
        ens = random_ensemble(rng, d, B, depth, base_offset=float(rng.normal()))
        X = rng.standard_normal((n, d))
        fast, naive = decompose_fast(ens, X), decompose_naive(ens, X)
        assert set(fast.components) == set(naive.components)
        worst = max([worst, abs(fast.intercept - naive.intercept)]
                    + [float(np.abs(fast[S] - naive[S]).max()) for S in naive.components])
    elapsed = time.perf_counter() - start
    assert report("A6", worst < 1e-10,
                  f"50 ensembles (B<=100, depth<=6, n<=1000): max component diff = {worst:.2e} "
                  f"(<1e-10), {elapsed:.1f}s")


def test_a7_invariant_suite():
    rng = rng_for(SEED, 7)
    failures, checks = [], 0

    def check(name, ok):
        nonlocal checks
        checks += 1
        if not ok:
            failures.append(name)

    for trial in range(20):
        d = int(rng.integers(2, 6))
        ens = general_ensemble(rng, d, int(rng.integers(1, 8)), int(rng.integers(1, 5)),
                               base_offset=float(rng.normal()))
        X = rng.standard_normal((30, d))
        store = decompose_fast(ens, X)
        shap = shap_from_components(store)
        yhat = predict(ens, X)
        check("efficiency", np.abs(store.total() - yhat).max() < 1e-9)
        check("shap efficiency", np.abs(shap.total() - yhat).max() < 1e-9)
        for U in range(1 << d):
            direct = marginalized_prediction(ens, U, X)
            check("subset-sum lemma", np.abs(store.subset_sum(U) - direct).max() < 1e-9)
            check("pdp identity", np.abs(pdp(store, U).values - direct).max() < 1e-9)
        alpha = float(rng.uniform(-1, 2))
        split = TreeEnsemble([ens.trees[0].scaled(alpha), ens.trees[0].scaled(1 - alpha)]
                             + ens.trees[1:], d, ens.base_offset)
        other = decompose_fast(split, X)
        check("uniqueness", abs(other.intercept - store.intercept) < 1e-10 and all(
            np.abs(other[S] - store[S]).max() < 1e-10
            for S in set(store.components) | set(other.components)))
        used = 0
        for tree in ens.trees:
            used |= tree.feature_set
        for k in range(d):
            if not used >> k & 1:
                check("dummy", np.all(shap.values[:, k] == 0.0))
        parts = [shap_from_components(decompose_fast(ens.subset(b), X)).values
                 for b in range(ens.n_trees)]
        check("linearity", np.abs(sum(parts) - shap.values).max() < 1e-10)
        # symmetry: relabelling features permutes the SHAP columns
        perm = rng.permutation(d)
        inv = np.argsort(perm)
        relabelled = TreeEnsemble(
            [type(t)(t.left, t.right, np.where(t.left >= 0, inv[t.feature], -1), t.threshold,
                     t.value, t.cover, t.root) for t in ens.trees], d, ens.base_offset)
        swapped = shap_from_components(decompose_fast(relabelled, X[:, perm])).values
        check("relabelling", np.abs(swapped - shap.values[:, perm]).max() < 1e-12)
    # symmetric tree: swapping the two inputs swaps their SHAP values
    sym = TreeEnsemble([depth2_tree((0.0, 1.0, 1.0, 3.0), t0=0.0, t1=0.0)], 2)
    Z = rng.standard_normal((50, 2))
    a = shap_from_components(decompose_fast(sym, Z)).values
    b = shap_from_components(decompose_fast(sym, Z[:, ::-1])).values
    check("symmetry", np.abs(a - b[:, ::-1]).max() < 1e-14)
    assert report("A7", not failures,
                  f"{checks} checks on 20 random ensembles (efficiency, subset-sum lemma, PDP "
                  f"identity, uniqueness under tree splitting, dummy, linearity, relabelling, symmetry); "
                  f"failed: {sorted(set(failures)) or 'none'}")


def test_a8_performance_shape(tmp_path):
    out = tmp_path / "bench.json"
    code = cli_main(["bench", "--n", "10000", "--trees", "100", "--depth", "4",
                     "--seed", str(SEED), "--out", str(out)])
    rec = json.loads(out.read_text())["records"][0]
    ok = code == 0 and rec["fast_seconds"] < 10 and rec["speedup"] > 5
    assert report("A8", ok,
                  f"n=10^4, B=100, depth 4: fast {rec['fast_seconds']:.2f}s (<10s), naive "
                  f"{rec['naive_seconds']:.2f}s, naive/fast = {rec['speedup']:.1f}x (>5x), "
                  f"max diff {rec['max_abs_diff']:.1e}")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
