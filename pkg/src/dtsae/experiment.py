"""Design-based selection experiments: sample, fit the candidate grid, score,
select and compare against the finite-population oracle.

Configuration is an INI file::

    [experiment]
    seed = 1
    samples = 20
    p_grid = 2, 4, 6, 8, 10, 12, 14, 16, 18, 20
    out_dir = results
    n_jobs = 1

    [population]
    grid = 10x10            ; rook lattice; or give adjacency + microdata
    units_per_area = 1000:4000   ; or a single count
    signal_rank = 12
    amplitude = 0.25
    decay = 0.8
    area_sd = 0.1
    unit_sd = 1.0
    mean = 0.0
    weight_sd = 0.3

    [designs]
    list = equal:30, equal:50, prop:0.0125

    [methods]
    list = dt-mse, dt-nll, dt-mse@0.2, esim, dic, waic

    [dt]
    epsilon = 0.6
    repeats = 5

    [esim]
    iterations = 100

    [gibbs]
    iterations = 3000
    burn_in = 500
    thin = 1
    prior_a = 0.001
    prior_b = 0.001

    [ratio]                 ; optional multi-fold vs repeated study
    folds = 5
    p_grid = 2, 10, 20

``dt-mse@0.2`` scores with training fraction 0.2 instead of ``[dt] epsilon``.
Relative paths are resolved against the directory of the config file.
"""

import configparser
import csv
import hashlib
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import rng as _rng
from .errors import ConfigError, InsufficientSampleError, UsageError
from .model import GibbsConfig, gibbs_fit_many
from .spatial import augment_design, grid_adjacency, load_adjacency, moran_eigenbasis
from .survey import (
    SamplingDesign,
    SpatialFieldConfig,
    direct_estimates,
    generate_population,
    load_microdata,
    poisson_sample,
)
from .thinning import esim_replicate, fold_train_test, multifold_thin, thin
from .validation import (
    DIC,
    DT_MSE,
    DT_NLL,
    ESIM,
    WAIC,
    ValidationScore,
    dic,
    mse_estimate,
    nll_score,
    select_model,
    waic,
)

METHOD_KINDS = {"dt-mse": DT_MSE, "dt-nll": DT_NLL, "esim": ESIM, "dic": DIC, "waic": WAIC}
CHAIN_BATCH = 128
SCORE_HEADER = ["design", "sample", "method", "p", "score", "failed"]
SELECTION_HEADER = ["design", "sample", "method", "p_selected"]
METRIC_HEADER = ["design", "method", "p_star", "rmse", "mean_bias", "n_failed"]
ORACLE_HEADER = ["design", "p", "mse"]
RATIO_HEADER = ["design", "p", "var_multifold", "var_repeated", "ratio"]


@dataclass(frozen=True)
class MethodSpec:
    """A scoring method; ``epsilon`` is set for the thinning scores only."""

    label: str
    kind: str
    epsilon: Optional[float] = None

    @classmethod
    def parse(cls, text, default_epsilon):
        text = text.strip()
        name, _, eps = text.partition("@")
        if name not in METHOD_KINDS:
            raise ConfigError(f"unknown method {name!r}")
        kind = METHOD_KINDS[name]
        if eps and kind not in (DT_MSE, DT_NLL):
            raise ConfigError(f"method {name!r} takes no training fraction")
        if kind in (DT_MSE, DT_NLL):
            try:
                e = float(eps) if eps else float(default_epsilon)
            except ValueError as exc:
                raise ConfigError(f"bad training fraction in {text!r}") from exc
            if not 0.0 < e < 1.0:
                raise ConfigError(f"training fraction {e} outside (0, 1)")
            return cls(text, kind, e)
        return cls(text, kind)


@dataclass(frozen=True)
class PopulationSource:
    """Either a synthetic grid population or microdata plus an adjacency file."""

    grid: Optional[tuple] = (10, 10)
    units_per_area: object = (1000, 4000)
    field: SpatialFieldConfig = SpatialFieldConfig()
    microdata: Optional[str] = None
    adjacency: Optional[str] = None


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    samples: int = 20
    p_grid: tuple = tuple(range(2, 21, 2))
    designs: tuple = (SamplingDesign("equal", 50),)
    methods: tuple = ()
    dt_epsilon: float = 0.6
    dt_repeats: int = 5
    esim_iterations: int = 100
    gibbs: GibbsConfig = GibbsConfig(3000, 500)
    population: PopulationSource = PopulationSource()
    out_dir: str = "results"
    n_jobs: int = 1
    ratio_folds: Optional[int] = None
    ratio_p_grid: tuple = ()

    def __post_init__(self):
        grid = tuple(int(p) for p in self.p_grid)
        if not grid:
            raise ConfigError("p_grid is empty")
        if any(p < 0 for p in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("p_grid must be non-negative and strictly increasing")
        object.__setattr__(self, "p_grid", grid)
        object.__setattr__(self, "ratio_p_grid", tuple(int(p) for p in self.ratio_p_grid))
        if self.samples < 1:
            raise ConfigError("samples must be at least 1")
        if self.dt_repeats < 1 or self.esim_iterations < 1:
            raise ConfigError("repeats and ESIM iterations must be positive")
        if self.n_jobs < 1:
            raise ConfigError("n_jobs must be positive")
        labels = [m.label for m in self.methods]
        if len(set(labels)) != len(labels):
            raise ConfigError("duplicate method")
        dlabels = [d.label for d in self.designs]
        if not dlabels or len(set(dlabels)) != len(dlabels):
            raise ConfigError("designs must be non-empty and distinct")
        if self.ratio_folds is not None and self.ratio_folds < 2:
            raise ConfigError("ratio folds must be at least 2")


def _ints(text):
    return tuple(int(v) for v in text.replace(",", " ").split())


def _parse_design(text):
    kind, sep, target = text.strip().partition(":")
    if not sep:
        raise ConfigError(f"design {text!r} must look like kind:target")
    try:
        return SamplingDesign(kind.strip(), float(target))
    except (ValueError, UsageError) as exc:
        raise ConfigError(f"bad design {text!r}: {exc}") from exc


def _parse_units(text):
    if ":" in text:
        lo, hi = text.split(":")
        return (int(lo), int(hi))
    return int(text)


def load_config(path):
    """Parse an experiment INI file into an :class:`ExperimentConfig`."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if not cp.read(path, encoding="utf-8"):
        raise ConfigError(f"cannot read config {path}")
    return config_from_parser(cp, os.path.dirname(os.path.abspath(path)))


def config_from_parser(cp, base_dir="."):
    def get(section, key, default=None):
        if cp.has_option(section, key):
            return cp.get(section, key).strip()
        return default

    def path(section, key):
        v = get(section, key)
        if not v:
            return None
        return v if os.path.isabs(v) else os.path.normpath(os.path.join(base_dir, v))

    try:
        dt_eps = float(get("dt", "epsilon", "0.6"))
        field_defaults = SpatialFieldConfig()
        sfc = SpatialFieldConfig(**{
            k: type(getattr(field_defaults, k))(get("population", k, str(getattr(field_defaults, k))))
            for k in field_defaults.__dataclass_fields__
        })
        microdata = path("population", "microdata")
        adjacency = path("population", "adjacency")
        grid_text = get("population", "grid")
        if microdata:
            if not adjacency:
                raise ConfigError("microdata requires an adjacency file")
            grid = None
        else:
            nr, nc = (grid_text or "10x10").lower().split("x")
            grid = (int(nr), int(nc))
        pop = PopulationSource(
            grid, _parse_units(get("population", "units_per_area", "1000:4000")), sfc, microdata, adjacency
        )
        gibbs = GibbsConfig(
            int(get("gibbs", "iterations", "3000")),
            int(get("gibbs", "burn_in", "500")),
            int(get("gibbs", "thin", "1")),
            float(get("gibbs", "prior_a", "0.001")),
            float(get("gibbs", "prior_b", "0.001")),
        )
        methods_text = get("methods", "list", "")
        methods = tuple(MethodSpec.parse(t, dt_eps) for t in methods_text.split(",") if t.strip())
        designs = tuple(_parse_design(t) for t in get("designs", "list", "equal:50").split(",") if t.strip())
        folds = get("ratio", "folds")
        out_dir = get("experiment", "out_dir", "results")
        if not os.path.isabs(out_dir):
            out_dir = os.path.normpath(os.path.join(base_dir, out_dir))
        return ExperimentConfig(
            seed=int(get("experiment", "seed", "0")),
            samples=int(get("experiment", "samples", "20")),
            p_grid=_ints(get("experiment", "p_grid", "2,4,6,8,10,12,14,16,18,20")),
            designs=designs,
            methods=methods,
            dt_epsilon=dt_eps,
            dt_repeats=int(get("dt", "repeats", "5")),
            esim_iterations=int(get("esim", "iterations", "100")),
            gibbs=gibbs,
            population=pop,
            out_dir=out_dir,
            n_jobs=int(get("experiment", "n_jobs", "1")),
            ratio_folds=int(folds) if folds else None,
            ratio_p_grid=_ints(get("ratio", "p_grid", "")),
        )
    except ConfigError:
        raise
    except (ValueError, UsageError) as exc:
        raise ConfigError(str(exc)) from exc


def config_to_ini(config):
    """Canonical INI text; :func:`load_config` on it gives back ``config``."""
    pop = config.population
    cp = configparser.ConfigParser()
    cp["experiment"] = {
        "seed": str(config.seed),
        "samples": str(config.samples),
        "p_grid": ", ".join(map(str, config.p_grid)),
        "out_dir": config.out_dir,
        "n_jobs": str(config.n_jobs),
    }
    psec = {}
    if pop.microdata:
        psec["microdata"] = pop.microdata
        psec["adjacency"] = pop.adjacency
    else:
        psec["grid"] = f"{pop.grid[0]}x{pop.grid[1]}"
    u = pop.units_per_area
    psec["units_per_area"] = f"{u[0]}:{u[1]}" if isinstance(u, tuple) else str(u)
    for k in pop.field.__dataclass_fields__:
        psec[k] = repr(getattr(pop.field, k))
    cp["population"] = psec
    cp["designs"] = {"list": ", ".join(f"{d.kind}:{d.target!r}" for d in config.designs)}
    cp["methods"] = {"list": ", ".join(m.label for m in config.methods)}
    cp["dt"] = {"epsilon": repr(config.dt_epsilon), "repeats": str(config.dt_repeats)}
    cp["esim"] = {"iterations": str(config.esim_iterations)}
    g = config.gibbs
    cp["gibbs"] = {
        "iterations": str(g.iterations),
        "burn_in": str(g.burn_in),
        "thin": str(g.thin_interval),
        "prior_a": repr(g.prior_a),
        "prior_b": repr(g.prior_b),
    }
    if config.ratio_folds is not None:
        cp["ratio"] = {
            "folds": str(config.ratio_folds),
            "p_grid": ", ".join(map(str, config.ratio_p_grid)),
        }
    lines = []
    for sec in cp.sections():
        lines.append(f"[{sec}]")
        lines.extend(f"{k} = {v}" for k, v in cp[sec].items())
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------- population


def build_population(config):
    """Population and adjacency described by ``config.population``."""
    src = config.population
    if src.microdata:
        pop = load_microdata(src.microdata)
        adjacency = load_adjacency(src.adjacency, pop.area_ids)
    else:
        adjacency = grid_adjacency(*src.grid)
        pop = generate_population(
            adjacency, src.units_per_area, src.field, _rng.stream(config.seed, "population")
        )
    return pop, adjacency


def candidate_designs(adjacency, p_grid):
    """``{p: [1 | first p Moran basis vectors]}``; ConfigError if infeasible."""
    basis = moran_eigenbasis(adjacency)
    m = adjacency.m
    for p in p_grid:
        if p > basis.q:
            raise ConfigError(f"p={p} exceeds the {basis.q} positive eigenvalues of the geography")
        if p + 1 >= m:
            raise ConfigError(f"p={p} leaves too few areas ({m}) for the Gibbs fit")
    ones = np.ones((m, 1))
    return {p: augment_design(ones, basis.columns(p), f"p{p}") for p in p_grid}


def sample_data(config, pop, design, s):
    """The direct-estimate set for sample ``s`` of ``design``.

    Raises :class:`InsufficientSampleError` when an area has fewer than two
    sampled units.
    """
    sample = poisson_sample(pop, design, _rng.stream(config.seed, "sample", design.label, s))
    return direct_estimates(sample, pop)


def data_hash(data):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(data.y).tobytes())
    h.update(np.ascontiguousarray(data.d).tobytes())
    return h.hexdigest()


def _fit_batched(datasets, X, gibbs, seeds, keep_draws=False):
    """Gibbs fits in chunks; a design-level error is returned for every entry."""
    out = []
    for start in range(0, len(datasets), CHAIN_BATCH):
        ds = datasets[start:start + CHAIN_BATCH]
        sd = seeds[start:start + CHAIN_BATCH]
        try:
            out.extend(gibbs_fit_many(ds, X, gibbs, sd, keep_draws=keep_draws))
        except Exception as exc:
            out.extend([exc] * len(ds))
    return out


# ----------------------------------------------------------------- results


@dataclass(frozen=True)
class ScoreRow:
    design: str
    sample: int
    method: str
    p: int
    score: float
    failed: bool


@dataclass(frozen=True)
class SelectionRow:
    design: str
    sample: int
    method: str
    p_selected: Optional[int]


@dataclass(frozen=True)
class MetricRow:
    design: str
    method: str
    p_star: Optional[int]
    rmse: float
    mean_bias: float
    n_failed: int


@dataclass
class ExperimentResults:
    scores: list
    selections: list
    metrics: list
    oracle: dict  # design -> {p: mean squared error summed over areas}
    p_star: dict  # design -> p* (None if the oracle could not be computed)
    consumed: dict = field(default_factory=dict)  # (design, sample, consumer) -> data hash
    ratios: list = field(default_factory=list)


@dataclass(frozen=True)
class RatioRow:
    design: str
    p: int
    var_multifold: float
    var_repeated: float
    ratio: float


def oracle_basis(theta_hats, truth):
    """Grid value minimising the sample-averaged squared error against ``truth``.

    ``theta_hats`` maps ``p`` to a sequence of per-sample estimate vectors
    (or fits with a ``theta_hat``). Exact ties go to the smaller ``p``.
    Returns ``(p_star, {p: mean over samples of the summed squared error})``.
    """
    if not theta_hats:
        raise UsageError("no fits supplied")
    truth = np.asarray(truth, dtype=float)
    counts = set()
    losses = {}
    for p in sorted(theta_hats):
        est = [getattr(f, "theta_hat", f) for f in theta_hats[p]]
        if not est or any(e is None or isinstance(e, Exception) for e in est):
            raise UsageError(f"missing fits for p={p}")
        est = np.asarray(est, dtype=float)
        if est.ndim != 2 or est.shape[1] != truth.size:
            raise UsageError(f"fits for p={p} do not match the truth vector")
        counts.add(est.shape[0])
        losses[p] = float(np.mean(np.sum((est - truth) ** 2, axis=1)))
    if len(counts) != 1:
        raise UsageError("every p needs fits for the same samples")
    best = min(losses, key=lambda p: (losses[p], p))
    return best, losses


def selection_metrics(selected, p_star):
    """``(rmse, mean_bias)`` of selected grid values around ``p_star``."""
    diff = np.asarray(selected, dtype=float) - float(p_star)
    if diff.size == 0:
        raise UsageError("no selections")
    return float(np.sqrt(np.mean(diff**2))), float(np.mean(diff))


# ------------------------------------------------------------- the runner


def _run_design(config, pop, designs_by_p, design):
    label = design.label
    S = config.samples
    grid = config.p_grid
    methods = config.methods
    consumed = {}

    datasets = {}
    for s in range(S):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                datasets[s] = sample_data(config, pop, design, s)
        except InsufficientSampleError as exc:
            datasets[s] = exc
    good = [s for s in range(S) if not isinstance(datasets[s], Exception)]

    # per (method label, sample, p) -> ValidationScore
    cell = {}

    def record(method, s, p, value, failures=()):
        cell[(method.label, s, p)] = ValidationScore(
            method.kind, f"p{p}", float(value), p=p, failures=tuple(failures),
            epsilon=method.epsilon,
        )

    # full-data fits: oracle and the information criteria
    ic_methods = [m for m in methods if m.kind in (DIC, WAIC)]
    full_seeds = [_rng.derive_seed(config.seed, "full", label, s) for s in good]
    theta_full = {p: {} for p in grid}
    for s in good:
        consumed[(label, s, "full")] = data_hash(datasets[s])
    for p in grid:
        X = designs_by_p[p].X
        fits = _fit_batched([datasets[s] for s in good], X, config.gibbs, full_seeds,
                            keep_draws=bool(ic_methods))
        for s, fit in zip(good, fits):
            if isinstance(fit, Exception):
                for m in ic_methods:
                    record(m, s, p, np.nan, [(0, fit)])
                continue
            theta_full[p][s] = fit.theta_hat
            for m in ic_methods:
                crit = dic if m.kind == DIC else waic
                record(m, s, p, crit(fit, datasets[s]).value)

    # data thinning, one set of splits per (training fraction, sample)
    dt_methods = [m for m in methods if m.kind in (DT_MSE, DT_NLL)]
    for eps in sorted({m.epsilon for m in dt_methods}):
        group = [m for m in dt_methods if m.epsilon == eps]
        R = config.dt_repeats
        train, seeds, keys, splits = [], [], [], {}
        for s in good:
            data = datasets[s]
            for m in group:
                consumed[(label, s, m.label)] = data_hash(data)
            base = _rng.derive_seed(config.seed, "dt", label, s)
            for r in range(R):
                sp = thin(data, eps, _rng.stream(base, "thin", r))
                splits[(s, r)] = sp
                train.append(sp.training_data(data))
                seeds.append(_rng.derive_seed(base, "fit", r))
                keys.append((s, r))
        for p in grid:
            preds = _fit_batched(train, designs_by_p[p].X, config.gibbs, seeds)
            by_sample = {}
            for (s, r), fit in zip(keys, preds):
                by_sample.setdefault(s, []).append((r, fit))
            for s, items in by_sample.items():
                for m in group:
                    scorer = mse_estimate if m.kind == DT_MSE else nll_score
                    vals, fails = [], []
                    for r, fit in items:
                        if isinstance(fit, Exception):
                            fails.append((r, fit))
                        else:
                            vals.append(scorer(fit.theta_hat, splits[(s, r)].y_test,
                                               datasets[s].d, eps))
                    record(m, s, p, np.mean(vals) if not fails else np.nan, fails)

    # ESIM
    esim_methods = [m for m in methods if m.kind == ESIM]
    if esim_methods:
        L = config.esim_iterations
        reps, seeds, keys = [], [], []
        for s in good:
            data = datasets[s]
            for m in esim_methods:
                consumed[(label, s, m.label)] = data_hash(data)
            eseed = _rng.derive_seed(config.seed, "esim", label, s)
            for l in range(L):
                reps.append(data.replace(y=esim_replicate(data, _rng.stream(eseed, "esim", l))))
                seeds.append(_rng.derive_seed(eseed, "esim-fit", l))
                keys.append((s, l))
        for p in grid:
            preds = _fit_batched(reps, designs_by_p[p].X, config.gibbs, seeds)
            acc = {}
            for (s, l), fit in zip(keys, preds):
                acc.setdefault(s, []).append((l, fit))
            for s, items in acc.items():
                fails = [(l, f) for l, f in items if isinstance(f, Exception)]
                vals = [np.mean((f.theta_hat - datasets[s].y) ** 2) for _, f in items
                        if not isinstance(f, Exception)]
                for m in esim_methods:
                    record(m, s, p, np.mean(vals) if not fails else np.nan, fails)

    # unusable samples fail every cell
    for s in range(S):
        if s in good:
            continue
        for m in methods:
            for p in grid:
                record(m, s, p, np.nan, [(0, datasets[s])])

    # oracle over samples where every full fit succeeded
    oracle_samples = [s for s in good if all(s in theta_full[p] for p in grid)]
    if oracle_samples:
        p_star, losses = oracle_basis(
            {p: [theta_full[p][s] for s in oracle_samples] for p in grid}, pop.theta
        )
    else:
        p_star, losses = None, {}

    scores, selections, metrics = [], [], []
    for m in methods:
        chosen, n_failed = [], 0
        for s in range(S):
            row_scores = [cell[(m.label, s, p)] for p in grid]
            for p, sc in zip(grid, row_scores):
                scores.append(ScoreRow(label, s, m.label, p, sc.value, not sc.valid))
            if all(sc.valid for sc in row_scores):
                pick = int(select_model(row_scores)[1:])
                chosen.append(pick)
                selections.append(SelectionRow(label, s, m.label, pick))
            else:
                n_failed += 1
                selections.append(SelectionRow(label, s, m.label, None))
        if chosen and p_star is not None:
            rmse, bias = selection_metrics(chosen, p_star)
        else:
            rmse, bias = float("nan"), float("nan")
        metrics.append(MetricRow(label, m.label, p_star, rmse, bias, n_failed))
    return scores, selections, metrics, losses, p_star, consumed


def _design_task(args):
    config, design = args
    pop, adjacency = build_population(config)
    designs_by_p = candidate_designs(adjacency, config.p_grid)
    return _run_design(config, pop, designs_by_p, design)


def run_experiment(config):
    """Run every (design, sample, method, p) cell of ``config``.

    Output is a deterministic function of the config: each design, sample,
    purpose and repeat draws from its own keyed stream, and parallel runs
    (``n_jobs > 1``) reduce in the same order as serial ones.
    """
    pop, adjacency = build_population(config)
    designs_by_p = candidate_designs(adjacency, config.p_grid)
    if config.ratio_folds is not None:
        candidate_designs(adjacency, config.ratio_p_grid or config.p_grid)
    if config.n_jobs > 1 and len(config.designs) > 1:
        with ProcessPoolExecutor(max_workers=config.n_jobs) as ex:
            parts = list(ex.map(_design_task, [(config, d) for d in config.designs]))
    else:
        parts = [_run_design(config, pop, designs_by_p, d) for d in config.designs]
    res = ExperimentResults([], [], [], {}, {}, {})
    for design, (sc, sel, met, losses, p_star, consumed) in zip(config.designs, parts):
        res.scores.extend(sc)
        res.selections.extend(sel)
        res.metrics.extend(met)
        res.oracle[design.label] = losses
        res.p_star[design.label] = p_star
        res.consumed.update(consumed)
    if config.ratio_folds is not None:
        res.ratios = variance_ratio_study(
            config, config.ratio_folds, p_values=config.ratio_p_grid or None,
            population=(pop, adjacency),
        )
    return res


# ------------------------------------------------------ variance ratio study


def variance_ratio_study(config, K, R=None, p_values=None, population=None):
    """Across-sample variance of the averaged MSE estimate, multi-fold over repeated.

    Multi-fold thinning with ``K`` folds (one held out) is compared with ``R``
    repeated single-fold thinnings at the matched fraction ``(K-1)/K``
    (``R`` defaults to ``K``). Both use the same direct estimates for every
    sample. Returns one :class:`RatioRow` per (design, p).
    """
    if K < 2:
        raise UsageError("multi-fold thinning needs K >= 2")
    R = K if R is None else int(R)
    if R < 1:
        raise UsageError("R must be at least 1")
    eps = (K - 1) / K
    pop, adjacency = population if population is not None else build_population(config)
    p_values = tuple(p_values) if p_values else config.p_grid
    designs_by_p = candidate_designs(adjacency, p_values)
    rows = []
    for design in config.designs:
        label = design.label
        data = {}
        for s in range(config.samples):
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    data[s] = sample_data(config, pop, design, s)
            except InsufficientSampleError:
                continue
        train, seeds, keys, tests = [], [], [], {}
        for s, ds in data.items():
            mf = multifold_thin(ds, K, _rng.stream(config.seed, "ratio-mf", label, s))
            for k in range(K):
                sp = fold_train_test(mf, k, 1)
                tests[(s, "mf", k)] = sp.y_test
                train.append(sp.training_data(ds))
                seeds.append(_rng.derive_seed(config.seed, "ratio-mf-fit", label, s, k))
                keys.append((s, "mf", k))
            base = _rng.derive_seed(config.seed, "ratio-rep", label, s)
            for r in range(R):
                sp = thin(ds, eps, _rng.stream(base, "thin", r))
                tests[(s, "rep", r)] = sp.y_test
                train.append(sp.training_data(ds))
                seeds.append(_rng.derive_seed(base, "fit", r))
                keys.append((s, "rep", r))
        for p in p_values:
            fits = _fit_batched(train, designs_by_p[p].X, config.gibbs, seeds)
            per = {}
            bad = set()
            for (s, kind, j), fit in zip(keys, fits):
                if isinstance(fit, Exception):
                    bad.add(s)
                    continue
                v = mse_estimate(fit.theta_hat, tests[(s, kind, j)], data[s].d, eps)
                per.setdefault((s, kind), []).append(v)
            ok = [s for s in data if s not in bad]
            mf_means = np.array([np.mean(per[(s, "mf")]) for s in ok])
            rep_means = np.array([np.mean(per[(s, "rep")]) for s in ok])
            if len(ok) < 2:
                v_mf = v_rep = ratio = float("nan")
            else:
                v_mf = float(np.var(mf_means, ddof=1))
                v_rep = float(np.var(rep_means, ddof=1))
                ratio = v_mf / v_rep
            rows.append(RatioRow(label, p, v_mf, v_rep, ratio))
    return rows


# ------------------------------------------------------------------ output


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _write(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) if not isinstance(v, str) else v for v in r])


def emit_results(results, out_dir, config=None):
    """Write the result tables (and ``config_echo.ini`` when ``config`` is given).

    Returns the list of paths written.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    def out(name):
        p = os.path.join(out_dir, name)
        paths.append(p)
        return p

    _write(out("scores.csv"), SCORE_HEADER,
           [(r.design, r.sample, r.method, r.p, r.score, r.failed) for r in results.scores])
    _write(out("selections.csv"), SELECTION_HEADER,
           [(r.design, r.sample, r.method, r.p_selected) for r in results.selections])
    _write(out("metrics.csv"), METRIC_HEADER,
           [(r.design, r.method, r.p_star, r.rmse, r.mean_bias, r.n_failed) for r in results.metrics])
    _write(out("oracle.csv"), ORACLE_HEADER,
           [(d, p, v) for d, losses in results.oracle.items() for p, v in sorted(losses.items())])
    if results.ratios:
        _write(out("ratios.csv"), RATIO_HEADER,
               [(r.design, r.p, r.var_multifold, r.var_repeated, r.ratio) for r in results.ratios])
    if config is not None:
        with open(out("config_echo.ini"), "w", encoding="utf-8") as fh:
            fh.write(config_to_ini(config))
    return paths
