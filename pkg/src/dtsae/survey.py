"""Design-based simulation: synthetic finite populations, stratified Poisson
sampling and Hajek direct estimates with linearised variances."""

import csv
import os
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InsufficientSampleError, ParseError, UsageError
from .model import DirectEstimateSet
from .spatial import moran_eigenbasis

VARIANCE_FLOOR = 1e-10


@dataclass(frozen=True)
class Population:
    """Units grouped into areas; ``unit_area[k]`` is the area index of unit k."""

    area_ids: Sequence[str]
    unit_area: np.ndarray
    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        ids = tuple(str(a) for a in self.area_ids)
        ua = np.asarray(self.unit_area, dtype=np.int64)
        v = np.asarray(self.values, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if not (ua.shape == v.shape == w.shape) or ua.ndim != 1:
            raise UsageError("unit arrays must be one-dimensional and equally long")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise UsageError("unit weights must be positive")
        if not np.all(np.isfinite(v)):
            raise UsageError("unit values must be finite")
        if ua.size and (ua.min() < 0 or ua.max() >= len(ids)):
            raise UsageError("unit area index out of range")
        N = np.bincount(ua, minlength=len(ids))
        if np.any(N == 0):
            raise UsageError("every area needs at least one unit")
        theta = np.bincount(ua, weights=w * v, minlength=len(ids)) / np.bincount(
            ua, weights=w, minlength=len(ids)
        )
        for name, val in (("area_ids", ids), ("unit_area", ua), ("values", v), ("weights", w)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "theta", theta)

    @property
    def m(self):
        return len(self.area_ids)


def true_means(pop):
    """Weighted finite-population area means."""
    return pop.theta.copy()


@dataclass(frozen=True)
class SpatialFieldConfig:
    """Area-mean surface: ``mean + amplitude * low-rank Moran signal + area noise``.

    Signal coefficients on the leading ``signal_rank`` basis vectors decay as
    ``decay**k``; ``unit_sd`` is the within-area unit noise and ``weight_sd``
    the log-scale spread of the base weights.
    """

    signal_rank: int = 12
    amplitude: float = 0.25
    decay: float = 0.8
    area_sd: float = 0.1
    unit_sd: float = 1.0
    mean: float = 0.0
    weight_sd: float = 0.3


def area_mean_surface(adjacency, config, rng):
    """Area means and the generating basis (m x signal_rank)."""
    m = adjacency.m
    q = config.signal_rank
    if q < 0:
        raise UsageError("signal_rank must be non-negative")
    if config.amplitude != 0 and q > 0:
        basis = moran_eigenbasis(adjacency)
        if q > basis.q:
            raise UsageError(f"signal_rank {q} exceeds the {basis.q} positive eigenvalues")
        V = basis.eigenvectors[:, :q] * np.sqrt(m)
        signs = rng.choice([-1.0, 1.0], size=q)
        coef = config.amplitude * signs * config.decay ** np.arange(q)
        signal = V @ coef
    else:
        V = np.zeros((m, 0))
        signal = np.zeros(m)
    mu = config.mean + signal + config.area_sd * rng.standard_normal(m)
    return mu, V


def generate_population(adjacency, units_per_area, config=SpatialFieldConfig(), rng=None):
    """Synthetic finite population over the areas of ``adjacency``.

    ``units_per_area`` is a count or an inclusive ``(low, high)`` range.
    """
    if rng is None:
        raise UsageError("an explicit random generator is required")
    m = adjacency.m
    if m < 2:
        raise UsageError("at least two areas are required")
    if np.isscalar(units_per_area):
        N = np.full(m, int(units_per_area))
    else:
        lo, hi = (int(x) for x in units_per_area)
        if lo < 1 or hi < lo:
            raise UsageError("units_per_area range must satisfy 1 <= low <= high")
        N = rng.integers(lo, hi + 1, size=m)
    if np.any(N < 1):
        raise UsageError("units_per_area must be positive")
    mu, _ = area_mean_surface(adjacency, config, rng)
    unit_area = np.repeat(np.arange(m), N)
    values = mu[unit_area] + config.unit_sd * rng.standard_normal(unit_area.size)
    weights = np.exp(config.weight_sd * rng.standard_normal(unit_area.size))
    return Population(adjacency.area_ids, unit_area, values, weights)


def load_microdata(path):
    """Population from an ``area_id,value,weight`` CSV; areas in first-seen order."""
    ids, index, ua, v, w = [], {}, [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"area_id", "value", "weight"} - set(reader.fieldnames or ())
        if missing:
            raise ParseError(f"missing column(s) {sorted(missing)}", 1)
        for lineno, row in enumerate(reader, start=2):
            a = row["area_id"]
            if a not in index:
                index[a] = len(ids)
                ids.append(a)
            try:
                v.append(float(row["value"]))
                w.append(float(row["weight"]))
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from exc
            ua.append(index[a])
    return Population(ids, np.array(ua), np.array(v), np.array(w))


def save_population(pop, out_dir):
    """Write ``microdata.csv`` and ``truth.csv`` (area_id,theta,N)."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "microdata.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["area_id", "value", "weight"])
        for a, v, wt in zip(pop.unit_area, pop.values, pop.weights):
            w.writerow([pop.area_ids[a], repr(float(v)), repr(float(wt))])
    with open(os.path.join(out_dir, "truth.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["area_id", "theta", "N"])
        for a, t, n in zip(pop.area_ids, pop.theta, pop.N):
            w.writerow([a, repr(float(t)), int(n)])


@dataclass(frozen=True)
class SamplingDesign:
    """``kind='equal'``: expected ``target`` units per area;
    ``kind='prop'``: expected sampling rate ``target`` in every area."""

    kind: str
    target: float

    def __post_init__(self):
        if self.kind not in ("equal", "prop"):
            raise UsageError(f"unknown design kind {self.kind!r}")
        if self.target <= 0:
            raise UsageError("design target must be positive")
        if self.kind == "prop" and self.target > 1:
            raise UsageError("a sampling rate must not exceed 1")

    @property
    def label(self):
        return f"{self.kind}-{self.target:g}"


def inclusion_probabilities(pop, design):
    """Within-area probabilities proportional to weight; returns (pi, n_clamped)."""
    wsum = np.bincount(pop.unit_area, weights=pop.weights, minlength=pop.m)
    share = pop.weights / wsum[pop.unit_area]
    if design.kind == "equal":
        pi = design.target * share
    else:
        pi = design.target * pop.N[pop.unit_area] * share
    clamped = int(np.sum(pi > 1.0))
    return np.minimum(pi, 1.0), clamped


@dataclass(frozen=True)
class Sample:
    included: np.ndarray  # bool per population unit
    pi: np.ndarray  # inclusion probability per population unit
    n: np.ndarray  # realised sample size per area
    empty_areas: tuple
    n_clamped: int = 0


def poisson_sample(pop, design, rng):
    """Independent Bernoulli(pi_k) inclusion for every unit.

    A warning lists clamped probabilities; areas with no sampled unit are
    reported in ``empty_areas``.
    """
    pi, clamped = inclusion_probabilities(pop, design)
    if clamped:
        warnings.warn(f"{clamped} inclusion probabilities clamped at 1", stacklevel=2)
    included = rng.random(pi.size) < pi
    n = np.bincount(pop.unit_area[included], minlength=pop.m)
    empty = tuple(pop.area_ids[i] for i in np.flatnonzero(n == 0))
    return Sample(included, pi, n, empty, clamped)


def direct_estimates(sample, pop, floor=VARIANCE_FLOOR):
    """Hajek area means with Taylor-linearised variances.

    With expansion weights ``a = w/pi`` (``1/pi`` when unit weights are 1),
    ``y_i = sum(a v) / sum(a)`` and
    ``d_i = sum((1 - pi) a^2 (v - y_i)^2) / Nhat_i^2`` over sampled units,
    ``Nhat_i = sum(a)``. The weights make ``y_i`` consistent for the weighted
    truth. Variances below ``floor`` are raised to it with a warning.
    """
    short = [pop.area_ids[i] for i in np.flatnonzero(sample.n < 2)]
    if short:
        raise InsufficientSampleError(short)
    y, d = _hajek(sample, pop)
    low = d < floor
    if low.any():
        warnings.warn(f"{int(low.sum())} sampling variance(s) floored at {floor:g}", stacklevel=2)
        d = np.where(low, floor, d)
    return DirectEstimateSet(y, d, pop.area_ids)


def direct_estimates_raw(sample, pop):
    """Unfloored ``(y, d)`` arrays; areas with no units give NaN."""
    with np.errstate(invalid="ignore", divide="ignore"):
        return _hajek(sample, pop)


def _hajek(sample, pop):
    s = sample.included
    area = pop.unit_area[s]
    pi = sample.pi[s]
    v = pop.values[s]
    a = pop.weights[s] / pi
    n_hat = np.bincount(area, weights=a, minlength=pop.m)
    y = np.bincount(area, weights=a * v, minlength=pop.m) / n_hat
    resid = v - y[area]
    d = np.bincount(area, weights=(1.0 - pi) * a**2 * resid**2, minlength=pop.m) / n_hat**2
    return y, d
