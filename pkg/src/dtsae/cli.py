"""Command-line entry point: ``dtsae <subcommand> ...``."""

import argparse
import csv
import dataclasses
import os
import sys
import warnings

import numpy as np

from . import rng as _rng
from .analytics import epsilon_grid, tradeoff_curve
from .errors import InsufficientSampleError
from .experiment import (
    ExperimentConfig,
    PopulationSource,
    build_population,
    emit_results,
    load_config,
    run_experiment,
    sample_data,
)
from .model import DesignMatrixSpec, DirectEstimateSet, GibbsConfig, gibbs_fit
from .spatial import (
    augment_design,
    load_adjacency,
    moran_eigenbasis,
    read_design_csv,
    write_design_csv,
)
from .survey import SamplingDesign, save_population
from .thinning import RepeatPlan, multifold_thin, thin
from .validation import (
    DIC,
    DT_MSE,
    DT_NLL,
    ESIM,
    WAIC,
    GibbsFitter,
    ValidationScore,
    dic,
    esim_score,
    repeated_validate,
    select_model,
    waic,
)

METHODS = {"dt-mse": DT_MSE, "dt-nll": DT_NLL, "esim": ESIM, "dic": DIC, "waic": WAIC}


def _writer(path):
    if path in (None, "-"):
        return sys.stdout, False
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    return open(path, "w", newline="", encoding="utf-8"), True


def _emit(path, header, rows):
    fh, close = _writer(path)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if close:
            fh.close()


def _f(x):
    return repr(float(x))


def _ints(text):
    return [int(v) for v in text.replace(",", " ").split()]


def _gibbs_config(args):
    return GibbsConfig(args.iterations, args.burn_in, args.thin)


def _add_gibbs_args(p):
    p.add_argument("--iterations", type=int, default=3000, help="Gibbs iterations")
    p.add_argument("--burn-in", type=int, default=500)
    p.add_argument("--thin", type=int, default=1, help="keep every n-th draw")


# ------------------------------------------------------------------ thin


def cmd_thin(args):
    data = DirectEstimateSet.from_csv(args.data)
    rows = []
    for r in range(args.repeats):
        if args.folds:
            split = multifold_thin(data, args.folds, _rng.stream(args.seed, "multifold", r))
            parts = [(f"fold_{k + 1}", split.folds[k]) for k in range(split.K)]
        else:
            sp = thin(data, args.epsilon, _rng.stream(args.seed, "thin", r))
            parts = [("train", sp.y_train), ("test", sp.y_test)]
        for name, values in parts:
            rows.extend([a, r, name, _f(v)] for a, v in zip(data.area_ids, values))
    _emit(args.out, ["area_id", "repeat", "component", "value"], rows)
    return 0


# -------------------------------------------------------------- validate


def _candidate_models(args, data):
    models = []
    if args.adjacency:
        adj = load_adjacency(args.adjacency, data.area_ids)
        basis = moran_eigenbasis(adj)
        ones = np.ones((data.m, 1))
        for p in _ints(args.p_grid):
            models.append(augment_design(ones, basis.columns(p), f"p{p}"))
    for path in args.design or ():
        ids, X, _ = read_design_csv(path)
        if list(ids) != list(data.area_ids):
            raise SystemExit(f"error: area ids in {path} do not match the data")
        name = os.path.splitext(os.path.basename(path))[0]
        models.append(DesignMatrixSpec(X, name))
    if not models:
        raise SystemExit("error: give --adjacency with --p-grid, or one or more --design files")
    return models


def cmd_validate(args):
    data = DirectEstimateSet.from_csv(args.data)
    models = _candidate_models(args, data)
    kind = METHODS[args.method]
    fitter = GibbsFitter(_gibbs_config(args))
    if kind in (DT_MSE, DT_NLL):
        scores = repeated_validate(
            data, models, RepeatPlan(args.repeats, args.epsilon, args.seed), fitter, kind
        )
    elif kind == ESIM:
        scores = [esim_score(data, m, args.esim_iters, fitter, seed=args.seed) for m in models]
    else:
        crit = dic if kind == DIC else waic
        scores = []
        cfg = _gibbs_config(args).with_seed(args.seed)
        for m in models:
            try:
                v = crit(gibbs_fit(data, m.X, cfg), data).value
                scores.append(ValidationScore(kind, m.model_id, v, np.array([v]), p=m.p))
            except Exception as exc:
                scores.append(ValidationScore(kind, m.model_id, float("nan"), p=m.p,
                                              failures=((0, exc),)))
    per_repeat = []
    for s in scores:
        vals = s.per_repeat if s.per_repeat is not None else [s.value]
        per_repeat.extend([s.model_id, args.method, r, _f(v)] for r, v in enumerate(vals))
    chosen = select_model(scores) if all(s.valid for s in scores) else None
    summary = [[s.model_id, args.method, _f(s.value), int(s.model_id == chosen)] for s in scores]
    os.makedirs(args.out_dir, exist_ok=True)
    _emit(os.path.join(args.out_dir, "repeats.csv"), ["model_id", "method", "repeat", "value"], per_repeat)
    _emit(os.path.join(args.out_dir, "summary.csv"), ["model_id", "method", "score", "selected"], summary)
    if chosen is None:
        failed = [s.model_id for s in scores if not s.valid]
        print(f"no selection: fits failed for {failed}", file=sys.stderr)
        return 1
    return 0


# ------------------------------------------------------------- analytics


def _read_d(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if "d" not in (reader.fieldnames or ()):
            raise SystemExit(f"error: {path} has no 'd' column")
        return np.array([float(r["d"]) for r in reader])


def _parse_grid(text):
    try:
        start, stop, step = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise SystemExit(f"error: --eps-grid must be start:stop:step, got {text!r}") from exc
    return epsilon_grid(start, stop, step)


def cmd_analytics(args):
    d = _read_d(args.d_file)
    X = None
    if args.mode == "estimated":
        if not args.design_file:
            raise SystemExit("error: --mode estimated needs --design-file")
        _, X, _ = read_design_csv(args.design_file)
    curve = tradeoff_curve(args.sigma2, d, X, _parse_grid(args.eps_grid))
    rows = [[_f(v) for v in row] for row in curve.rows()]
    _emit(args.out, ["epsilon", "gap", "gap_sq", "variance", "sum"], rows)
    return 0


# ----------------------------------------------------------------- basis


def _edge_ids(path):
    ids, seen = [], set()
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            for tok in raw.split("#", 1)[0].split():
                if tok not in seen:
                    seen.add(tok)
                    ids.append(tok)
    return ids


def _area_ids(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return [r["area_id"] for r in csv.DictReader(fh)]


def cmd_basis(args):
    ids = _area_ids(args.areas) if args.areas else _edge_ids(args.adjacency)
    adj = load_adjacency(args.adjacency, ids)
    basis = moran_eigenbasis(adj).columns(args.p)
    design = augment_design(np.ones((adj.m, 1)), basis)
    write_design_csv(args.out, adj.area_ids, design)
    return 0


# -------------------------------------------------------------- simulate


def _population_config(args):
    if args.config:
        cfg = load_config(args.config)
        return dataclasses.replace(cfg, seed=args.seed)
    if args.microdata:
        if not args.adjacency:
            raise SystemExit("error: --microdata requires --adjacency")
        src = PopulationSource(None, microdata=args.microdata, adjacency=args.adjacency)
    else:
        src = PopulationSource()
    return ExperimentConfig(seed=args.seed, population=src)


def cmd_simulate(args):
    cfg = _population_config(args)
    pop, _ = build_population(cfg)
    design = SamplingDesign(args.design, args.target)
    os.makedirs(args.out_dir, exist_ok=True)
    if not cfg.population.microdata:
        save_population(pop, args.out_dir)
    width = max(3, len(str(args.samples)))
    status = 0
    for s in range(args.samples):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                data = sample_data(cfg, pop, design, s)
        except InsufficientSampleError as exc:
            print(f"sample {s}: {exc}", file=sys.stderr)
            status = 1
            continue
        data.to_csv(os.path.join(args.out_dir, f"sample_{s:0{width}d}.csv"))
    return status


# ------------------------------------------------------------------- run


def cmd_run(args):
    cfg = load_config(args.config)
    changes = {}
    if args.out_dir:
        changes["out_dir"] = os.path.abspath(args.out_dir)
    if args.n_jobs:
        changes["n_jobs"] = args.n_jobs
    if changes:
        cfg = dataclasses.replace(cfg, **changes)
    results = run_experiment(cfg)
    for path in emit_results(results, cfg.out_dir, cfg):
        print(path)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dtsae", description="Data-thinning validation for area-level models."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("thin", help="split direct estimates into train/test or K folds")
    p.add_argument("data", help="CSV with area_id,y,d")
    p.add_argument("--epsilon", type=float, default=0.5)
    p.add_argument("--folds", type=int, default=None, help="multi-fold thinning with K folds")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_thin)

    p = sub.add_parser("validate", help="score candidate models on one dataset")
    p.add_argument("data", help="CSV with area_id,y,d")
    p.add_argument("--method", choices=sorted(METHODS), default="dt-mse")
    p.add_argument("--epsilon", type=float, default=0.6)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--esim-iters", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--adjacency", help="edge list; candidates are [1 | Moran basis]")
    p.add_argument("--p-grid", default="2,4,6,8,10,12,14,16,18,20")
    p.add_argument("--design", action="append", help="design CSV (repeatable)")
    p.add_argument("--out-dir", default=".")
    _add_gibbs_args(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("analytics", help="closed-form gap/variance trade-off curve")
    p.add_argument("--sigma2", type=float, required=True)
    p.add_argument("--d-file", required=True, help="CSV with a 'd' column")
    p.add_argument("--design-file", help="design CSV (estimated mode)")
    p.add_argument("--eps-grid", default="0.01:0.99:0.01")
    p.add_argument("--mode", choices=["known", "estimated"], default="known")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_analytics)

    p = sub.add_parser("basis", help="write [1 | Moran basis] design CSV")
    p.add_argument("--adjacency", required=True)
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--areas", help="CSV with an area_id column fixing the row order")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_basis)

    p = sub.add_parser("simulate", help="draw survey samples and write direct estimates")
    p.add_argument("--design", choices=["equal", "prop"], required=True)
    p.add_argument("--target", type=float, required=True)
    p.add_argument("--samples", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", help="experiment INI whose [population] section is used")
    p.add_argument("--microdata")
    p.add_argument("--adjacency")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run", help="run a full selection experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", help="override [experiment] out_dir")
    p.add_argument("--n-jobs", type=int)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
