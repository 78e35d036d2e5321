"""Closed-form thinning gap, MSE-estimator variance and optimal training fractions.

Everything here assumes the Fay-Herriot model with known sigma2; the "known"
functions also take beta as known, the "estimated" ones account for
estimating beta by weighted least squares.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DomainError, SingularDesignError, UsageError
from .model import check_design, matrix_rank

EPS_MIN = 0.01
EPS_MAX = 0.99


def _check_sigma2(sigma2):
    if not np.isfinite(sigma2) or sigma2 <= 0:
        raise DomainError("sigma2 must be positive and finite")
    return float(sigma2)


def _check_d(d):
    d = np.atleast_1d(np.asarray(d, dtype=float))
    if d.ndim != 1 or d.size == 0:
        raise DomainError("d must be a non-empty vector")
    if np.any(d <= 0) or not np.all(np.isfinite(d)):
        raise DomainError("sampling variances must be positive and finite")
    return d


def _check_eps(epsilon, allow_one=False):
    ok = 0.0 < epsilon <= 1.0 if allow_one else 0.0 < epsilon < 1.0
    if not ok:
        raise DomainError(f"epsilon out of range: {epsilon}")
    return float(epsilon)


@dataclass(frozen=True)
class GapReport:
    epsilon: float
    per_area_gap: np.ndarray
    g1_gap: np.ndarray
    g2_gap: np.ndarray
    mean_gap: float
    upper_bound: np.ndarray


@dataclass(frozen=True)
class VarianceReport:
    epsilon: float
    total: float
    test_component: float
    train_component: float
    per_area_f: np.ndarray = None


def _gamma(sigma2, d, epsilon):
    return sigma2 / (sigma2 + d / epsilon)


def mse_full_known(sigma2, d):
    """Full-data oracle MSE of the known-parameter posterior mean, mean(gamma_i d_i)."""
    sigma2 = _check_sigma2(sigma2)
    d = _check_d(d)
    return float(np.mean(_gamma(sigma2, d, 1.0) * d))


def gap_upper_bound(sigma2, d, epsilon):
    """Per-area bound ((1-eps)/eps) gamma_i^2 d_i on the known-parameter gap."""
    sigma2 = _check_sigma2(sigma2)
    d = _check_d(d)
    epsilon = _check_eps(epsilon, allow_one=True)
    return (1.0 - epsilon) / epsilon * _gamma(sigma2, d, 1.0) ** 2 * d


def _g1_gap(sigma2, d, epsilon):
    return (1.0 - epsilon) / epsilon * _gamma(sigma2, d, epsilon) * _gamma(sigma2, d, 1.0) * d


def thinning_gap_known(sigma2, d, epsilon):
    """Per-area gap MSE_eps - MSE_full with beta and sigma2 known."""
    sigma2 = _check_sigma2(sigma2)
    d = _check_d(d)
    epsilon = _check_eps(epsilon)
    g1 = _g1_gap(sigma2, d, epsilon)
    return GapReport(
        epsilon, g1, g1, np.zeros_like(g1), float(np.mean(g1)),
        gap_upper_bound(sigma2, d, epsilon),
    )


def g2_terms(sigma2, d, X, epsilon=1.0):
    """Beta-estimation MSE term per area at training fraction ``epsilon``.

    ``(1 - gamma_i(eps))^2 x_i' [sum_j x_j x_j' / (sigma2 + d_j/eps)]^{-1} x_i``;
    zero when ``X`` has no columns.
    """
    sigma2 = _check_sigma2(sigma2)
    d = _check_d(d)
    epsilon = _check_eps(epsilon, allow_one=True)
    X = np.asarray(X, dtype=float).reshape(d.size, -1)
    if X.shape[1] == 0:
        return np.zeros_like(d)
    X = check_design(X, d.size)
    w = 1.0 / (sigma2 + d / epsilon)
    M = X.T @ (w[:, None] * X)
    try:
        cf = linalg.cho_factor(M, lower=True)
    except linalg.LinAlgError as exc:
        raise SingularDesignError("weighted cross-product is not positive definite") from exc
    q = np.einsum("ij,ji->i", X, linalg.cho_solve(cf, X.T))
    return (1.0 - _gamma(sigma2, d, epsilon)) ** 2 * q


def g2_intercept_only(sigma2, d, epsilon=1.0):
    """Intercept-only form of :func:`g2_terms`: (1 - gamma_i(eps))^2 / w(eps)."""
    sigma2 = _check_sigma2(sigma2)
    d = _check_d(d)
    epsilon = _check_eps(epsilon, allow_one=True)
    w = np.sum(1.0 / (sigma2 + d / epsilon))
    return (1.0 - _gamma(sigma2, d, epsilon)) ** 2 / w


def thinning_gap_estimated(sigma2, d, X, epsilon):
    """Per-area gap with sigma2 known and beta estimated by WLS.

    A zero-column ``X`` reproduces :func:`thinning_gap_known`.
    """
    sigma2 = _check_sigma2(sigma2)
    d = _check_d(d)
    epsilon = _check_eps(epsilon, allow_one=True)
    g1 = _g1_gap(sigma2, d, epsilon)
    g2 = g2_terms(sigma2, d, X, epsilon) - g2_terms(sigma2, d, X, 1.0)
    gap = g1 + g2
    return GapReport(
        epsilon, gap, g1, g2, float(np.mean(gap)), gap_upper_bound(sigma2, d, epsilon)
    )


def variance_direct(d, epsilon):
    """Variance of the MSE estimator when the estimate is ``y_train / eps``."""
    d = _check_d(d)
    epsilon = _check_eps(epsilon)
    m = d.size
    r = 1.0 - epsilon
    test = 2.0 / m**2 * np.sum((d / r) ** 2 + 2.0 * (d / r) * (d / epsilon))
    train = 2.0 / m**2 * np.sum((d / epsilon) ** 2)
    total = 2.0 / m**2 * np.sum(d**2) / (epsilon**2 * r**2)
    return VarianceReport(epsilon, float(total), float(test), float(train))


def error_variance_known(sigma2, d, epsilon):
    """Variance sigma2 d_i / (eps sigma2 + d_i) of the known-parameter training error."""
    return sigma2 * d / (epsilon * sigma2 + d)


def variance_fh_known(sigma2, d, epsilon):
    """Variance of the MSE estimator for the known-parameter posterior mean."""
    sigma2 = _check_sigma2(sigma2)
    d = _check_d(d)
    epsilon = _check_eps(epsilon)
    m = d.size
    r = 1.0 - epsilon
    g = error_variance_known(sigma2, d, epsilon)
    f = d / r + g
    test = 2.0 / m**2 * np.sum((d / r) ** 2 + 2.0 * (d / r) * g)
    train = 2.0 / m**2 * np.sum(g**2)
    total = 2.0 / m**2 * np.sum(f**2)
    return VarianceReport(epsilon, float(total), float(test), float(train), f)


def optimal_epsilon_area(sigma2, d):
    """Area-wise variance-minimising fraction max(0, 1/2 - d/(2 sigma2))."""
    sigma2 = np.asarray(sigma2, dtype=float)
    d = np.asarray(d, dtype=float)
    if np.any(sigma2 <= 0) or np.any(d <= 0):
        raise DomainError("sigma2 and d must be positive")
    out = np.maximum(0.0, 0.5 - d / (2.0 * sigma2))
    return float(out) if out.ndim == 0 else out


def epsilon_grid(start=EPS_MIN, stop=EPS_MAX, step=0.01):
    """Inclusive grid clamped to [0.01, 0.99]."""
    if step <= 0:
        raise DomainError("grid step must be positive")
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    grid = np.round(start + step * np.arange(n), 12)
    return np.unique(np.clip(grid, EPS_MIN, EPS_MAX))


def optimal_epsilon_global(sigma2, d, grid_step=1e-3):
    """Grid argmin of :func:`variance_fh_known` over [0.01, 0.99]."""
    if not 0 < grid_step <= 0.01:
        raise DomainError("grid_step must lie in (0, 0.01]")
    sigma2 = _check_sigma2(sigma2)
    d = _check_d(d)
    grid = epsilon_grid(EPS_MIN, EPS_MAX, grid_step)
    r = 1.0 - grid[:, None]
    f = d / r + error_variance_known(sigma2, d, grid[:, None])
    v = np.sum(f**2, axis=1)
    return float(grid[int(np.argmin(v))])


@dataclass(frozen=True)
class TradeoffCurve:
    epsilon: np.ndarray
    gap: np.ndarray
    gap_sq: np.ndarray
    variance: np.ndarray
    total: np.ndarray

    def rows(self):
        return zip(self.epsilon, self.gap, self.gap_sq, self.variance, self.total)


def tradeoff_curve(sigma2, d, X=None, eps_grid=None):
    """Squared mean gap plus estimator variance along a grid of fractions.

    ``X=None`` uses the known-beta gap; otherwise the estimated-beta gap for
    design ``X``. The variance column is the known-parameter closed form in
    both modes.
    """
    if eps_grid is None:
        eps_grid = epsilon_grid()
    eps = np.asarray(eps_grid, dtype=float)
    if np.any(eps <= 0) or np.any(eps >= 1):
        raise DomainError("grid points must lie in (0, 1)")
    eps = np.unique(np.clip(eps, EPS_MIN, EPS_MAX))
    if X is None:
        gap = np.array([thinning_gap_known(sigma2, d, e).mean_gap for e in eps])
    else:
        gap = np.array([thinning_gap_estimated(sigma2, d, X, e).mean_gap for e in eps])
    var = np.array([variance_fh_known(sigma2, d, e).total for e in eps])
    gap_sq = gap**2
    return TradeoffCurve(eps, gap, gap_sq, var, gap_sq + var)


NESTING_TOL = 1e-8


def _is_nested(X_small, X_big):
    Q, _ = np.linalg.qr(X_big)
    resid = X_small - Q @ (Q.T @ X_small)
    scale = max(1.0, float(np.max(np.abs(X_small))))
    return float(np.max(np.abs(resid))) <= NESTING_TOL * scale


def g2_monotone_in_p(sigma2, d, nested_designs):
    """Full-data g2 per area for each design in an increasing nested chain.

    Returns an array of shape (len(nested_designs), m). Designs must be full
    rank, strictly growing in column count, and nested in column space.
    """
    d = _check_d(d)
    designs = []
    for k, X in enumerate(nested_designs):
        X = np.asarray(X, dtype=float).reshape(d.size, -1)
        if matrix_rank(X) < X.shape[1]:
            raise UsageError(f"design {k} is rank deficient")
        if designs:
            if X.shape[1] <= designs[-1].shape[1]:
                raise UsageError(f"design {k} does not add columns to design {k - 1}")
            if not _is_nested(designs[-1], X):
                raise UsageError(f"design {k - 1} is not nested in design {k}")
        designs.append(X)
    return np.array([g2_terms(sigma2, d, X, 1.0) for X in designs])
