"""Command-line interface.

Every failure prints a single line ``glex: error[<kind>]: <message>`` to
stderr and exits with status 2.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import bitset
from ._validation import DepthCapError, ModelError
from .decompose import ALGORITHMS, EFFICIENCY_ATOL, ComponentStore, decompose
from .explain import (BRUTEFORCE_MAX_FEATURES, importance, pdp, remove_features,
                      shap_bruteforce, shap_from_components)
from .model import (Dataset, TreeEnsemble, load_model, predict, read_csv, serialize, validate,
                    write_csv)
from .synth import SCENARIOS, BoostParams, SimSpec, fit_gbt, generate, random_ensemble, \
    refit_without, rng_for

PROG = "glex"


class CliError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


# -- helpers ------------------------------------------------------------------

def _fmt(v) -> str:
    return repr(float(v))


def _names(arg):
    if not arg:
        return None
    path = Path(arg)
    if path.is_file():
        text = path.read_text()
        return [s.strip() for s in text.replace(",", "\n").splitlines() if s.strip()]
    return [s.strip() for s in arg.split(",") if s.strip()]


def _load_model(args, check=True) -> TreeEnsemble:
    if not args.model:
        raise CliError("usage", "--model is required")
    if not Path(args.model).is_file():
        raise CliError("io", f"model file not found: {args.model}")
    return load_model(args.model, _names(getattr(args, "feature_names", None)),
                      getattr(args, "base_offset", None), check=check)


def _model_rows(ensemble: TreeEnsemble, data: Dataset, what="data") -> np.ndarray:
    """Columns of ``data`` in model order, matched by name when possible."""
    names = ensemble.feature_names
    if all(name in data.column_names for name in names):
        return data.values[:, [data.column_names.index(name) for name in names]]
    if data.d == ensemble.n_features:
        return data.values
    raise CliError("data", f"{what} has {data.d} columns and lacks model features "
                           f"{[n for n in names if n not in data.column_names]}")


def _read_data(path, what="data") -> Dataset:
    if not path:
        raise CliError("usage", f"--{what} is required")
    if not Path(path).is_file():
        raise CliError("io", f"{what} file not found: {path}")
    return read_csv(path)


def _load(args):
    ens = _load_model(args)
    data = _read_data(args.data)
    return ens, data, _model_rows(ens, data)


def _store(args, ens, X) -> ComponentStore:
    return decompose(ens, X, args.algorithm, args.threads)


def _out(path):
    if path in (None, "-"):
        return _Stdout()
    return open(path, "w", newline="")


class _Stdout:
    def __enter__(self):
        return sys.stdout

    def __exit__(self, *exc):
        sys.stdout.flush()


def _write_components(path, store: ComponentStore):
    with _out(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_id", "subset", "value"])
        subsets = store.realized_subsets
        names = [store.name(S) for S in subsets]
        for i in range(store.n_rows):
            w.writerow([i, "", _fmt(store.intercept)])
            for S, name in zip(subsets, names):
                w.writerow([i, name, _fmt(store.components[S][i])])


def _metadata(ens, store: ComponentStore, algorithm) -> dict:
    return {
        "model_sha256": ens.fingerprint(),
        "n": store.n_rows,
        "d": store.n_features,
        "q": store.q,
        "realized_subsets": len(store.components),
        "algorithm": algorithm,
        "intercept": store.intercept,
    }


def _check_efficiency(ens, X, total):
    gap = np.abs(total - predict(ens, X))
    if gap.size and gap.max() > EFFICIENCY_ATOL:
        i = int(np.argmax(gap))
        raise CliError("efficiency", f"row {i}: explanation sums differ from the prediction by "
                                     f"{gap[i]:.3e}")


# -- commands -----------------------------------------------------------------

def cmd_decompose(args):
    ens, data, X = _load(args)
    store = _store(args, ens, X)
    _write_components(args.out, store)
    meta = args.meta or (f"{args.out}.meta.json" if args.out not in (None, "-") else None)
    if meta:
        Path(meta).write_text(json.dumps(_metadata(ens, store, args.algorithm), indent=1) + "\n")


def cmd_shap(args):
    ens, data, X = _load(args)
    if args.oracle:
        if ens.n_features > BRUTEFORCE_MAX_FEATURES:
            raise CliError("oracle-dimension",
                           f"--oracle needs d <= {BRUTEFORCE_MAX_FEATURES}, model has d = "
                           f"{ens.n_features}")
        shap = shap_bruteforce(ens, X)
    else:
        shap = shap_from_components(_store(args, ens, X))
    if args.check_efficiency:
        _check_efficiency(ens, X, shap.total())
    with _out(args.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_id", "feature", "phi"])
        for i in range(X.shape[0]):
            w.writerow([i, "", _fmt(shap.phi0)])
            for k, name in enumerate(ens.feature_names):
                w.writerow([i, name, _fmt(shap.values[i, k])])


def cmd_pdp(args):
    ens, data, X = _load(args)
    try:
        S = bitset.parse_subset(args.subset, ens.feature_names)
    except ValueError as exc:
        raise CliError("usage", f"--subset: {exc}") from None
    feats = bitset.to_indices(S)
    if args.grid:
        grid = _read_data(args.grid, "grid")
        missing = [ens.feature_names[k] for k in feats if ens.feature_names[k] not in grid.column_names]
        if missing:
            raise CliError("data", f"grid lacks columns {missing}")
        # components inside S only read the S coordinates, so the other
        # columns of the evaluation rows are irrelevant
        rows = np.zeros((grid.n, ens.n_features))
        for k in feats:
            rows[:, k] = grid.column(ens.feature_names[k])
    else:
        rows = X
    background = X if args.algorithm == "grid" else None
    store = decompose(ens, rows, args.algorithm, args.threads, background=background)
    curve = pdp(store, S, rows)
    with _out(args.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subset"] + [ens.feature_names[k] for k in feats] + ["xi"])
        name = store.name(S)
        for i in range(rows.shape[0]):
            w.writerow([name] + [_fmt(v) for v in curve.points[i]] + [_fmt(curve.values[i])])


def cmd_importance(args):
    ens = _load_model(args)
    source = args.importance_data or args.data
    data = _read_data(source)
    X = _model_rows(ens, data)
    report = importance(_store(args, ens, X))
    with _out(args.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "key", "value"])
        for kind, key, value in report.rows():
            w.writerow([kind, key, _fmt(value)])


def _median_gap(values, group):
    return float(np.median(values[group == 1]) - np.median(values[group == 0]))


def cmd_debias(args):
    ens, data, X = _load(args)
    try:
        U = bitset.parse_subset(args.remove, ens.feature_names)
    except ValueError as exc:
        raise CliError("usage", f"--remove: {exc}") from None
    store = _store(args, ens, X)
    model = remove_features(store, U)
    yhat = model.predict()
    with _out(args.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_id", "yhat"])
        for i, v in enumerate(yhat):
            w.writerow([i, _fmt(v)])
    if args.components_out:
        _write_components(args.components_out, model.store)
    if args.gap_by:
        if args.gap_by not in data.column_names:
            raise CliError("data", f"--gap-by column {args.gap_by!r} not in data")
        group = data.column(args.gap_by)
        if not np.isin(group, (0.0, 1.0)).all():
            raise CliError("data", f"--gap-by column {args.gap_by!r} must be 0/1")
        report = {"column": args.gap_by, "full": _median_gap(store.total(), group),
                  "debiased": _median_gap(yhat, group)}
        print(json.dumps(report), file=sys.stderr if args.out in (None, "-") else sys.stdout)


def cmd_simulate(args):
    spec = SimSpec(args.scenario, args.n, args.seed, args.corr, args.hours_sd)
    data, y = generate(spec)
    out = args.out
    if out in (None, "-"):
        raise CliError("usage", "--out is required for simulate")
    write_csv(out, data, {args.target: y})


def cmd_fit(args):
    data = _read_data(args.data)
    if args.target not in data.column_names:
        raise CliError("data", f"target column {args.target!r} not in data")
    y = data.column(args.target)
    cols = [c for c in data.column_names if c != args.target]
    X = data.values[:, [data.column_names.index(c) for c in cols]]
    params = BoostParams(args.rounds, args.depth, args.learning_rate, args.min_rows)
    if args.drop:
        try:
            drop = bitset.parse_subset(args.drop, cols)
        except ValueError as exc:
            raise CliError("usage", f"--drop: {exc}") from None
        ens = refit_without(X, y, params, drop, cols)
    else:
        ens = fit_gbt(X, y, params, cols)
    text = serialize(ens) + "\n"
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)


def _ints(text):
    try:
        return [int(s) for s in str(text).split(",") if s.strip()]
    except ValueError:
        raise CliError("usage", f"expected comma-separated integers, got {text!r}") from None


def _timed(fn):
    start = time.perf_counter()
    result = fn()
    return time.perf_counter() - start, result


def cmd_bench(args):
    records = []
    for n in _ints(args.n):
        for trees in _ints(args.trees):
            for depth in _ints(args.depth):
                rng = rng_for(args.seed, 100)
                ens = random_ensemble(rng, args.features, trees, depth)
                X = rng.standard_normal((n, args.features))
                fast_s, fast = _timed(lambda: decompose(ens, X, "fast", args.threads))
                rec = {"n": n, "trees": trees, "depth": depth, "d": args.features,
                       "fast_seconds": fast_s}
                if not args.skip_naive:
                    naive_s, naive = _timed(lambda: decompose(ens, X, "naive"))
                    diff = max((float(np.abs(fast[S] - naive[S]).max()) for S in naive.components),
                               default=0.0)
                    rec.update({
                        "naive_seconds": naive_s,
                        "fast_over_naive": fast_s / naive_s,
                        "speedup": naive_s / fast_s,
                        "max_abs_diff": max(diff, abs(fast.intercept - naive.intercept)),
                    })
                records.append(rec)
    text = json.dumps({"records": records}, indent=1) + "\n"
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)


def cmd_validate(args):
    ens = _load_model(args, check=False)
    problems = validate(ens)
    for p in problems:
        print(f"violation: {p}")
    if problems:
        raise CliError("model", f"{len(problems)} invariant violation(s)")
    print(f"ok: {ens.n_trees} trees, d={ens.n_features}, max depth {ens.max_depth}")


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=PROG, description="Functional decomposition of tree ensembles.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(p, data=True, algorithm=True):
        p.add_argument("--model", help="native model JSON or booster dump")
        p.add_argument("--feature-names", help="comma list or file naming the dump's features")
        p.add_argument("--base-offset", type=float, default=None,
                       help="global offset added to the dump's trees")
        if data:
            p.add_argument("--data", help="CSV of rows to explain")
        p.add_argument("--out", default="-", help="output file (default stdout)")
        if algorithm:
            p.add_argument("--algorithm", choices=ALGORITHMS, default="fast")
        p.add_argument("--threads", type=int, default=1, help="worker cap")
        p.add_argument("--seed", type=int, default=0)
        return p

    p = common(sub.add_parser("decompose", help="write all components"))
    p.add_argument("--meta", help="metadata JSON path (default <out>.meta.json)")
    p.set_defaults(func=cmd_decompose)

    p = common(sub.add_parser("shap", help="SHAP values from components"))
    p.add_argument("--oracle", action="store_true", help="exact subset-sum Shapley values")
    p.add_argument("--check-efficiency", action="store_true")
    p.set_defaults(func=cmd_shap)

    p = common(sub.add_parser("pdp", help="partial dependence on a feature subset"))
    p.add_argument("--subset", required=True, help="feature names joined by ':' or ','")
    p.add_argument("--grid", help="CSV of evaluation points (default: the data rows)")
    p.set_defaults(func=cmd_pdp)

    p = common(sub.add_parser("importance", help="feature and interaction importance"))
    p.add_argument("--importance-data",
                   help="rows the expectations run over (default: --data)")
    p.set_defaults(func=cmd_importance)

    p = common(sub.add_parser("debias", help="drop every component touching some features"))
    p.add_argument("--remove", required=True, help="features to remove")
    p.add_argument("--components-out", help="write the surviving components here")
    p.add_argument("--gap-by", help="0/1 column; report the median prediction gap")
    p.set_defaults(func=cmd_debias)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--scenario", choices=sorted(SCENARIOS), required=True)
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corr", type=float, default=0.3)
    p.add_argument("--hours-sd", type=float, default=4.0)
    p.add_argument("--target", default="y")
    p.add_argument("--out")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a boosted tree ensemble")
    p.add_argument("--data", required=True)
    p.add_argument("--target", default="y")
    p.add_argument("--rounds", type=int, default=100)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--min-rows", type=int, default=1)
    p.add_argument("--drop", help="refit without these features")
    p.add_argument("--out", default="-")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("bench", help="time the fast and naive engines")
    p.add_argument("--n", default="10000", help="row counts, comma separated")
    p.add_argument("--trees", default="100")
    p.add_argument("--depth", default="4")
    p.add_argument("--features", type=int, default=10)
    p.add_argument("--skip-naive", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_bench)

    p = common(sub.add_parser("validate", help="check model invariants"), data=False,
               algorithm=False)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "threads", 1) < 1:
            raise CliError("usage", "--threads must be >= 1")
        args.func(args)
    except CliError as exc:
        return _fail(exc.kind, str(exc))
    except DepthCapError as exc:
        return _fail("depth-cap", str(exc))
    except ModelError as exc:
        return _fail("model", str(exc))
    except (ValueError, OSError) as exc:
        return _fail("input", str(exc))
    return 0


def _fail(kind, message) -> int:
    line = " ".join(str(message).split())
    print(f"{PROG}: error[{kind}]: {line}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
