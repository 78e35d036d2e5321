"""Fay-Herriot area-level model: shrinkage, WLS, BLUP and a Gibbs sampler."""

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from . import rng as _rng
from .errors import (
    DomainError,
    NumericalFailureError,
    ShapeError,
    SingularDesignError,
    UnderdeterminedError,
    UsageError,
)

RANK_TOL = 1e-10
SIGMA2_FLOOR = 1e-12


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DirectEstimateSet:
    """Per-area direct estimates ``y`` with known sampling variances ``d``."""

    y: np.ndarray
    d: np.ndarray
    area_ids: Optional[Sequence] = None

    def __post_init__(self):
        y = _frozen(self.y)
        d = _frozen(self.d)
        if y.ndim != 1 or d.ndim != 1:
            raise ShapeError("y and d must be one-dimensional")
        if y.shape != d.shape:
            raise ShapeError(f"y has {y.size} entries but d has {d.size}")
        if y.size < 1:
            raise ShapeError("at least one area is required")
        if not np.all(np.isfinite(y)):
            raise DomainError("every direct estimate must be finite")
        if not np.all(np.isfinite(d)) or np.any(d <= 0):
            raise DomainError("every sampling variance must be positive and finite")
        ids = self.area_ids
        if ids is None:
            ids = [str(i + 1) for i in range(y.size)]
        ids = tuple(str(a) for a in ids)
        if len(ids) != y.size:
            raise ShapeError(f"{len(ids)} area ids for {y.size} areas")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "area_ids", ids)

    @property
    def m(self):
        return self.y.size

    def replace(self, y=None, d=None):
        """Copy with new estimates and/or variances, keeping the area ids."""
        return DirectEstimateSet(
            self.y if y is None else y, self.d if d is None else d, self.area_ids
        )

    @classmethod
    def from_csv(cls, path):
        """Read an ``area_id,y,d`` CSV file."""
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            missing = {"area_id", "y", "d"} - set(reader.fieldnames or ())
            if missing:
                raise UsageError(f"{path}: missing column(s) {sorted(missing)}")
            rows = list(reader)
        return cls(
            [float(r["y"]) for r in rows],
            [float(r["d"]) for r in rows],
            [r["area_id"] for r in rows],
        )

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["area_id", "y", "d"])
            for a, y, d in zip(self.area_ids, self.y, self.d):
                w.writerow([a, repr(float(y)), repr(float(d))])


def matrix_rank(X, tol=RANK_TOL):
    """Numerical rank from a column-pivoted QR with relative tolerance."""
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        return 0
    r = linalg.qr(X, mode="r", pivoting=True)[0]
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0:
        return 0
    return int(np.sum(diag > tol * diag[0]))


def check_design(X, m=None):
    """Validate a design matrix; returns it as a 2-D float array."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ShapeError("design matrix must be two-dimensional")
    if m is not None and X.shape[0] != m:
        raise ShapeError(f"design has {X.shape[0]} rows but there are {m} areas")
    if X.shape[1] > X.shape[0]:
        raise SingularDesignError(f"{X.shape[1]} columns exceed {X.shape[0]} rows")
    if not np.all(np.isfinite(X)):
        raise DomainError("design matrix has non-finite entries")
    rank = matrix_rank(X)
    if rank < X.shape[1]:
        raise SingularDesignError(f"design has rank {rank} < {X.shape[1]} columns")
    return X


@dataclass(frozen=True)
class DesignMatrixSpec:
    """A candidate covariate matrix; ``name`` identifies the model."""

    X: np.ndarray
    name: Optional[str] = None

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        X.setflags(write=False)
        object.__setattr__(self, "X", X)
        if self.name is None:
            object.__setattr__(self, "name", f"p{X.shape[1]}")

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def model_id(self):
        return self.name


@dataclass(frozen=True)
class PosteriorDraws:
    beta: np.ndarray  # (S, p)
    sigma2: np.ndarray  # (S,)
    theta: np.ndarray  # (S, m)

    @property
    def n_draws(self):
        return self.sigma2.size

    def to_csv(self, path):
        """Write the long ``draw,param,index,value`` layout."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["draw", "param", "index", "value"])
            for s in range(self.n_draws):
                for j, v in enumerate(self.beta[s]):
                    w.writerow([s, "beta", j, repr(float(v))])
                w.writerow([s, "sigma2", 0, repr(float(self.sigma2[s]))])
                for i, v in enumerate(self.theta[s]):
                    w.writerow([s, "theta", i, repr(float(v))])

    @classmethod
    def from_csv(cls, path):
        vals = {"beta": {}, "sigma2": {}, "theta": {}}
        with open(path, newline="", encoding="utf-8") as fh:
            for r in csv.DictReader(fh):
                vals[r["param"]][(int(r["draw"]), int(r["index"]))] = float(r["value"])

        def dense(d):
            if not d:
                return np.zeros((0, 0))
            S = 1 + max(k[0] for k in d)
            n = 1 + max(k[1] for k in d)
            out = np.empty((S, n))
            for (s, j), v in d.items():
                out[s, j] = v
            return out

        return cls(dense(vals["beta"]), dense(vals["sigma2"])[:, 0], dense(vals["theta"]))


@dataclass(frozen=True)
class FayHerriotFit:
    beta: np.ndarray
    sigma2: float
    gamma: np.ndarray
    theta_hat: np.ndarray
    fit_kind: str
    draws: Optional[PosteriorDraws] = field(default=None, repr=False)


@dataclass(frozen=True)
class GibbsConfig:
    """Chain settings and the inverse-gamma prior ``IG(prior_a, prior_b)`` on sigma2."""

    iterations: int = 5000
    burn_in: int = 1000
    thin_interval: int = 1
    prior_a: float = 0.001
    prior_b: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1 or self.thin_interval < 1:
            raise UsageError("iterations and thin_interval must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise UsageError("burn_in must satisfy 0 <= burn_in < iterations")
        if self.prior_a <= 0 or self.prior_b <= 0:
            raise UsageError("inverse-gamma prior parameters must be positive")
        if self.n_retained < 100:
            raise UsageError(f"only {self.n_retained} retained draws; at least 100 required")

    @property
    def n_retained(self):
        return (self.iterations - self.burn_in) // self.thin_interval

    def with_seed(self, seed):
        return GibbsConfig(
            self.iterations, self.burn_in, self.thin_interval,
            self.prior_a, self.prior_b, int(seed),
        )


def shrinkage_factor(sigma2, d, epsilon=1.0):
    """Weight on the (rescaled) direct estimate: sigma2 / (sigma2 + d/epsilon).

    Works elementwise on arrays. ``epsilon = 1`` gives the full-data factor.
    """
    sigma2 = np.asarray(sigma2, dtype=float)
    d = np.asarray(d, dtype=float)
    epsilon = np.asarray(epsilon, dtype=float)
    if np.any(sigma2 <= 0):
        raise DomainError("sigma2 must be positive")
    if np.any(d <= 0):
        raise DomainError("sampling variances must be positive")
    if np.any(epsilon <= 0) or np.any(epsilon > 1):
        raise DomainError("epsilon must lie in (0, 1]")
    out = sigma2 / (sigma2 + d / epsilon)
    return float(out) if out.ndim == 0 else out


def wls_beta(y, d, X, sigma2):
    """Weighted least squares with weights 1/(sigma2 + d_j).

    Returns the length-p coefficient vector. Raises SingularDesignError if
    ``X`` is rank deficient.
    """
    y = np.asarray(y, dtype=float)
    d = np.asarray(d, dtype=float)
    if y.ndim != 1 or y.shape != d.shape:
        raise ShapeError("y and d must be vectors of equal length")
    X = check_design(X, y.size)
    if sigma2 <= 0:
        raise DomainError("sigma2 must be positive")
    sw = 1.0 / np.sqrt(sigma2 + d)
    # least squares on the whitened system avoids forming X'WX
    beta, *_ = linalg.lstsq(X * sw[:, None], y * sw)
    return beta


def blup(data, X, sigma2, beta=None):
    """Best linear unbiased predictor with known sigma2.

    When ``beta`` is given it is used as is (known-parameter posterior mean);
    otherwise it is estimated by :func:`wls_beta`.
    """
    X = check_design(X, data.m)
    if sigma2 <= 0:
        raise DomainError("sigma2 must be positive")
    if beta is None:
        beta = wls_beta(data.y, data.d, X, sigma2)
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.size != X.shape[1]:
        raise ShapeError(f"beta has {beta.size} entries for {X.shape[1]} columns")
    gamma = sigma2 / (sigma2 + data.d)
    theta = gamma * data.y + (1.0 - gamma) * (X @ beta)
    return FayHerriotFit(beta, float(sigma2), gamma, theta, "blup_known_sigma2")


def _initial_state(y, d, X):
    s2 = max(np.var(y) - np.mean(d), 0.01 * np.mean(d))
    return s2, wls_beta(y, d, X, s2)


def _rows(A, B):
    """``A @ B.T`` row by row; unlike BLAS the result for a row does not
    depend on how many rows are in the batch."""
    return np.einsum("bj,kj->bk", A, B)


def _run_chains(Y, D, X, config, seeds, keep_draws):
    """Run one Gibbs chain per row of ``Y``/``D`` in lockstep.

    Each chain draws from its own streams, so a chain's output does not
    depend on which other chains share the batch.
    """
    B, m = Y.shape
    p = X.shape[1]
    XtX = X.T @ X
    H = linalg.solve(XtX, X.T, assume_a="pos")  # (p, m) OLS projector
    L = linalg.cholesky(linalg.inv(XtX), lower=True)
    shape = config.prior_a + 0.5 * m

    s2 = np.empty(B)
    beta = np.empty((B, p))
    for b in range(B):
        s2[b], beta[b] = _initial_state(Y[b], D[b], X)
    mu = _rows(beta, X)

    normal_gens = [_rng.stream(s, "gibbs", "normal") for s in seeds]
    gamma_gens = [_rng.stream(s, "gibbs", "gamma") for s in seeds]

    n_keep = config.n_retained
    sum_theta = np.zeros((B, m))
    sum_beta = np.zeros((B, p))
    sum_s2 = np.zeros(B)
    if keep_draws:
        d_theta = np.empty((B, n_keep, m))
        d_beta = np.empty((B, n_keep, p))
        d_s2 = np.empty((B, n_keep))
    failed_at = np.full(B, -1)
    kept = 0
    chunk = 256
    for start in range(0, config.iterations, chunk):
        n = min(chunk, config.iterations - start)
        Z = np.stack([g.standard_normal((n, m + p)) for g in normal_gens], axis=1)
        G = np.stack([g.standard_gamma(shape, n) for g in gamma_gens], axis=1)
        for t in range(n):
            it = start + t
            gam = s2[:, None] / (s2[:, None] + D)
            theta = gam * Y + (1.0 - gam) * mu + np.sqrt(gam * D) * Z[t, :, :m]
            beta = _rows(theta, H) + np.sqrt(s2)[:, None] * _rows(Z[t, :, m:], L)
            mu = _rows(beta, X)
            ss = np.sum((theta - mu) ** 2, axis=1)
            s2 = (config.prior_b + 0.5 * ss) / G[t]
            bad = ~np.isfinite(s2)
            if bad.any():
                newly = bad & (failed_at < 0)
                failed_at[newly] = it
                s2[bad] = 1.0
                beta[bad] = 0.0
                mu[bad] = 0.0
            s2 = np.maximum(s2, SIGMA2_FLOOR)
            if it >= config.burn_in and (it - config.burn_in + 1) % config.thin_interval == 0:
                if kept < n_keep:
                    sum_theta += theta
                    sum_beta += beta
                    sum_s2 += s2
                    if keep_draws:
                        d_theta[:, kept] = theta
                        d_beta[:, kept] = beta
                        d_s2[:, kept] = s2
                    kept += 1

    out = []
    for b in range(B):
        if failed_at[b] >= 0:
            out.append(NumericalFailureError(
                f"non-finite draw at iteration {failed_at[b]}", iteration=int(failed_at[b])
            ))
            continue
        s2_mean = sum_s2[b] / kept
        draws = None
        if keep_draws:
            draws = PosteriorDraws(d_beta[b].copy(), d_s2[b].copy(), d_theta[b].copy())
        out.append(FayHerriotFit(
            beta=sum_beta[b] / kept,
            sigma2=float(s2_mean),
            gamma=s2_mean / (s2_mean + D[b]),
            theta_hat=sum_theta[b] / kept,
            fit_kind="gibbs",
            draws=draws,
        ))
    return out


def _check_gibbs_inputs(m, X):
    X = check_design(X, m)
    if m <= X.shape[1]:
        raise UnderdeterminedError(f"{m} areas for {X.shape[1]} coefficients")
    return X


def gibbs_fit(data, X, config=GibbsConfig(), keep_draws=True):
    """Posterior sample for the Fay-Herriot model.

    Flat prior on beta and ``IG(a, b)`` on sigma2; the point estimate is the
    posterior mean of theta over retained draws.
    """
    X = _check_gibbs_inputs(data.m, X)
    # overflow is detected and reported per chain, so silence numpy's warning
    with np.errstate(over="ignore", invalid="ignore"):
        res = _run_chains(data.y[None, :], data.d[None, :], X, config, [config.seed], keep_draws)[0]
    if isinstance(res, Exception):
        raise res
    return res


def gibbs_fit_many(datasets, X, config, seeds, keep_draws=False):
    """Independent chains for several datasets sharing one design.

    Returns one entry per dataset, either a :class:`FayHerriotFit` or the
    :class:`NumericalFailureError` for that chain. Entry ``k`` equals
    ``gibbs_fit(datasets[k], X, config.with_seed(seeds[k]))``.
    """
    if len(datasets) != len(seeds):
        raise ShapeError("one seed per dataset is required")
    if not datasets:
        return []
    X = _check_gibbs_inputs(datasets[0].m, X)
    Y = np.stack([ds.y for ds in datasets])
    D = np.stack([ds.d for ds in datasets])
    with np.errstate(over="ignore", invalid="ignore"):
        return _run_chains(Y, D, X, config, [int(s) for s in seeds], keep_draws)


def batch_means_se(x, n_batches=50):
    """Monte Carlo standard error of the mean of a correlated chain (axis 0)."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0] // n_batches * n_batches
    means = x[:n].reshape((n_batches, -1) + x.shape[1:]).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(n_batches)
