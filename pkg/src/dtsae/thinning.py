"""Randomisation schemes for Gaussian direct estimates.

Single-fold and multi-fold data thinning, data fission (tau = 1) and the
ESIM perturbation. All functions take an explicit ``numpy.random.Generator``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, UsageError


def _check_open_unit(epsilon):
    if not 0.0 < epsilon < 1.0:
        raise DomainError(f"epsilon must lie in (0, 1), got {epsilon}")


@dataclass(frozen=True)
class ThinnedSplit:
    y_train: np.ndarray
    y_test: np.ndarray
    epsilon: float
    source_d: np.ndarray

    def training_data(self, data):
        """Rescaled training component as a direct-estimate set (variance d/eps)."""
        return data.replace(self.y_train / self.epsilon, self.source_d / self.epsilon)

    def test_data(self, data):
        eps = 1.0 - self.epsilon
        return data.replace(self.y_test / eps, self.source_d / eps)


@dataclass(frozen=True)
class MultiFoldSplit:
    folds: np.ndarray  # (K, m)
    y: np.ndarray
    source_d: np.ndarray

    @property
    def K(self):
        return self.folds.shape[0]


@dataclass(frozen=True)
class RepeatPlan:
    """``R`` single-fold thinnings at a fixed ``epsilon``.

    Repeat ``r`` draws from the stream derived from ``(base_seed, r)``.
    """

    R: int
    epsilon: float
    base_seed: int = 0

    def __post_init__(self):
        if self.R < 1:
            raise UsageError("R must be at least 1")
        _check_open_unit(self.epsilon)


@dataclass(frozen=True)
class FissionSplit:
    """Fissioned pair with the constants of the test-given-train law.

    ``y_test | y_train ~ N(coef * (y_train + theta), cond_var)``.
    """

    y_train: np.ndarray
    y_test: np.ndarray
    coef: float
    cond_var: np.ndarray

    def conditional_mean(self, theta):
        return self.coef * (self.y_train + np.asarray(theta, dtype=float))


def _thin_arrays(y, d, epsilon, rng):
    z = rng.standard_normal(y.shape)
    y1 = epsilon * y + np.sqrt(epsilon * (1.0 - epsilon) * d) * z
    return y1, y - y1


def thin(data, epsilon, rng):
    """Split ``y`` into independent training and test parts that sum to ``y``.

    ``y_train | y ~ N(eps * y, eps (1 - eps) d)`` and ``y_test = y - y_train``.
    """
    _check_open_unit(epsilon)
    y1, y2 = _thin_arrays(data.y, data.d, epsilon, rng)
    return ThinnedSplit(y1, y2, float(epsilon), data.d)


def thin_with_variance(y, d_used, epsilon, rng):
    """Thin raw arrays with a (possibly misspecified) variance ``d_used``."""
    _check_open_unit(epsilon)
    y = np.asarray(y, dtype=float)
    d_used = np.broadcast_to(np.asarray(d_used, dtype=float), y.shape)
    if np.any(d_used <= 0):
        raise DomainError("thinning variances must be positive")
    return _thin_arrays(y, d_used, epsilon, rng)


def misspecified_thin_covariance(d_true, d_used, epsilon):
    """Covariance of the two thinned parts when thinning used ``d_used``."""
    _check_open_unit(epsilon)
    if np.any(np.asarray(d_true) <= 0) or np.any(np.asarray(d_used) <= 0):
        raise DomainError("variances must be positive")
    return epsilon * (1.0 - epsilon) * (np.asarray(d_true) - np.asarray(d_used))


def multifold_thin(data, K, rng):
    """Split ``y`` into ``K`` folds, marginally iid ``N(theta/K, d/K)``.

    Folds are peeled off the running remainder by binary thinning with
    fraction ``1/(K-k+1)``; the last fold is whatever remains.
    """
    if int(K) != K or K < 2:
        raise DomainError(f"K must be an integer >= 2, got {K}")
    K = int(K)
    folds = np.empty((K, data.m))
    rest = data.y.copy()
    rest_d = data.d.copy()
    for k in range(K - 1):
        frac = 1.0 / (K - k)
        folds[k], rest = _thin_arrays(rest, rest_d, frac, rng)
        rest_d = rest_d * (1.0 - frac)
    folds[K - 1] = rest
    return MultiFoldSplit(folds, data.y, data.d)


def fold_train_test(split, k, test_fold_count=1):
    """Hold out ``test_fold_count`` folds starting at ``k`` (cyclically).

    Returns a :class:`ThinnedSplit` whose training part is ``y`` minus the
    held-out folds, with ``epsilon = (K - test_fold_count) / K``.
    """
    K = split.K
    if not 0 <= k < K:
        raise UsageError(f"fold index {k} out of range for K={K}")
    if not 1 <= test_fold_count <= K - 1:
        raise UsageError(f"test_fold_count must lie in [1, {K - 1}]")
    idx = [(k + j) % K for j in range(test_fold_count)]
    test = split.folds[idx].sum(axis=0)
    return ThinnedSplit(split.y - test, test, (K - test_fold_count) / K, split.source_d)


def fission(data, rng):
    """Data fission with tau = 1: train on ``y + e``, test on ``y``."""
    e = np.sqrt(data.d) * rng.standard_normal(data.m)
    return FissionSplit(data.y + e, data.y.copy(), 0.5, data.d / 2.0)


def esim_replicate(data, rng):
    """Synthetic estimates ``z = y + e`` with ``e ~ N(0, d)``."""
    return data.y + np.sqrt(data.d) * rng.standard_normal(data.m)
