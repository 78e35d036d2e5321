"""Out-of-sample validation scores and the baseline criteria.

A *fitter* is any callable ``fitter(data, X, seed) -> theta_hat`` returning
point estimates for the areas of ``data``. Fitters may also provide
``fit_many(datasets, X, seeds)`` returning a list whose entries are either
estimates or the exception raised for that dataset; batch-capable fitters
are used that way automatically.
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from . import rng as _rng
from .errors import DomainError, ShapeError, UsageError
from .model import DesignMatrixSpec, GibbsConfig, blup, gibbs_fit_many
from .thinning import RepeatPlan, esim_replicate, thin

LOG_2PI = float(np.log(2.0 * np.pi))

DT_MSE = "dt_mse"
DT_NLL = "dt_nll"
ESIM = "esim"
DIC = "dic"
WAIC = "waic"


@dataclass(frozen=True)
class ValidationScore:
    """One model's score under one method; lower is better."""

    method: str
    model_id: str
    value: float
    per_repeat: Optional[np.ndarray] = None
    epsilon: Optional[float] = None
    n_repeats: Optional[int] = None
    p: Optional[int] = None
    failures: tuple = field(default=(), repr=False)

    @property
    def valid(self):
        return not self.failures and np.isfinite(self.value)


def _check_pair(theta_train, y_test, d, epsilon):
    theta_train = np.asarray(theta_train, dtype=float)
    y_test = np.asarray(y_test, dtype=float)
    d = np.asarray(d, dtype=float)
    if not (theta_train.shape == y_test.shape == d.shape):
        raise ShapeError("theta_train, y_test and d must have equal shapes")
    if not 0.0 < epsilon < 1.0:
        raise DomainError(f"epsilon must lie in (0, 1), got {epsilon}")
    if np.any(d <= 0):
        raise DomainError("sampling variances must be positive")
    return theta_train, y_test, d


def mse_terms(theta_train, y_test, d, epsilon):
    """Per-area terms of :func:`mse_estimate` (arrays of any common shape)."""
    theta_train, y_test, d = _check_pair(theta_train, y_test, d, epsilon)
    r = 1.0 - epsilon
    return (theta_train - y_test / r) ** 2 - d / r


def mse_estimate(theta_train, y_test, d, epsilon):
    """Bias-corrected squared error of training estimates against the test part.

    Can be negative; values are not floored.
    """
    return float(np.mean(mse_terms(theta_train, y_test, d, epsilon)))


def nll_terms(theta_train, y_test, d, epsilon):
    """Per-area negative log densities summed by :func:`nll_score`."""
    theta_train, y_test, d = _check_pair(theta_train, y_test, d, epsilon)
    r = 1.0 - epsilon
    var = r * d
    resid = y_test - r * theta_train
    return 0.5 * (LOG_2PI + np.log(var) + resid**2 / var)


def nll_score(theta_train, y_test, d, epsilon):
    """Negative plug-in predictive log-likelihood of the test part."""
    return float(np.sum(nll_terms(theta_train, y_test, d, epsilon)))


SCORERS = {DT_MSE: mse_estimate, DT_NLL: nll_score}


class BlupFitter:
    """BLUP with a fixed sigma2; ``beta`` fixed too when given (known-parameter mode)."""

    def __init__(self, sigma2, beta=None):
        self.sigma2 = sigma2
        self.beta = beta

    def __call__(self, data, X, seed=None):
        return blup(data, X, self.sigma2, self.beta).theta_hat


class GibbsFitter:
    """Posterior-mean point estimates from :func:`~dtsae.model.gibbs_fit`."""

    def __init__(self, config=GibbsConfig()):
        self.config = config

    def __call__(self, data, X, seed=0):
        res = self.fit_many([data], X, [seed])[0]
        if isinstance(res, Exception):
            raise res
        return res

    def fit_many(self, datasets, X, seeds):
        try:
            fits = gibbs_fit_many(datasets, X, self.config, seeds)
        except Exception as exc:  # design-level failure applies to every dataset
            return [exc] * len(datasets)
        return [f if isinstance(f, Exception) else f.theta_hat for f in fits]


def fit_all(fitter, datasets, X, seeds):
    """Fit every dataset, collecting per-dataset exceptions instead of raising."""
    if hasattr(fitter, "fit_many"):
        return list(fitter.fit_many(datasets, X, seeds))
    out = []
    for ds, s in zip(datasets, seeds):
        try:
            out.append(np.asarray(fitter(ds, X, s), dtype=float))
        except Exception as exc:
            out.append(exc)
    return out


def _as_specs(models):
    specs = [m if isinstance(m, DesignMatrixSpec) else DesignMatrixSpec(m) for m in models]
    names = [s.model_id for s in specs]
    if len(set(names)) != len(names):
        specs = [DesignMatrixSpec(s.X, f"{s.model_id}#{k}") for k, s in enumerate(specs)]
    return specs


@dataclass
class ThinnedFits:
    """Shared thinning splits and the per-model training predictions."""

    splits: list
    predictions: dict  # model_id -> list over repeats of array or Exception
    specs: list
    epsilon: float


def thinned_predictions(data, models, plan, fitter):
    """Fit every model on the same ``R`` thinned training sets.

    Split ``r`` uses stream ``(base_seed, "thin", r)`` and every model is fit
    at repeat ``r`` with the same fitter seed, so duplicated models receive
    identical predictions.
    """
    specs = _as_specs(models)
    splits = [thin(data, plan.epsilon, _rng.stream(plan.base_seed, "thin", r)) for r in range(plan.R)]
    train = [sp.training_data(data) for sp in splits]
    seeds = [_rng.derive_seed(plan.base_seed, "fit", r) for r in range(plan.R)]
    preds = {}
    for spec in specs:
        preds[spec.model_id] = fit_all(fitter, train, spec.X, seeds)
    return ThinnedFits(splits, preds, specs, plan.epsilon)


def score_thinned(fits, data, score_kind):
    scorer = SCORERS[score_kind]
    out = []
    for spec in fits.specs:
        values = np.full(len(fits.splits), np.nan)
        failures = []
        for r, (sp, pred) in enumerate(zip(fits.splits, fits.predictions[spec.model_id])):
            if isinstance(pred, Exception):
                failures.append((r, pred))
                continue
            values[r] = scorer(pred, sp.y_test, data.d, fits.epsilon)
        value = float(np.mean(values)) if not failures else float("nan")
        out.append(ValidationScore(
            score_kind, spec.model_id, value, values, fits.epsilon,
            len(fits.splits), spec.p, tuple(failures),
        ))
    return out


def repeated_validate(data, models, plan, fitter, score_kind=DT_MSE):
    """Average thinning score over ``plan.R`` splits shared by all models."""
    if score_kind not in SCORERS:
        raise UsageError(f"unknown thinning score {score_kind!r}")
    if not isinstance(plan, RepeatPlan):
        raise UsageError("plan must be a RepeatPlan")
    return score_thinned(thinned_predictions(data, models, plan, fitter), data, score_kind)


def esim_score(data, model, L, fitter, seed=0):
    """Empirical-simulation score: refit on ``y + e`` and compare with ``y``.

    Replicate ``l`` uses stream ``(seed, "esim", l)``.
    """
    if L < 1:
        raise UsageError("L must be at least 1")
    spec = model if isinstance(model, DesignMatrixSpec) else DesignMatrixSpec(model)
    reps = [data.replace(y=esim_replicate(data, _rng.stream(seed, "esim", l))) for l in range(L)]
    seeds = [_rng.derive_seed(seed, "esim-fit", l) for l in range(L)]
    preds = fit_all(fitter, reps, spec.X, seeds)
    values = np.full(L, np.nan)
    failures = []
    for l, pred in enumerate(preds):
        if isinstance(pred, Exception):
            failures.append((l, pred))
        else:
            values[l] = np.mean((np.asarray(pred) - data.y) ** 2)
    value = float(np.mean(values)) if not failures else float("nan")
    return ValidationScore(ESIM, spec.model_id, value, values, None, L, spec.p, tuple(failures))


@dataclass(frozen=True)
class InformationCriterion:
    value: float
    penalty: float  # p_D or p_waic
    fit_term: float  # D(theta_bar) or lppd


def _draws_of(fit):
    if getattr(fit, "draws", None) is None or fit.draws.n_draws == 0:
        raise UsageError("posterior draws are required")
    return fit.draws.theta


def _loglik(theta, data):
    return -0.5 * (LOG_2PI + np.log(data.d) + (data.y - theta) ** 2 / data.d)


def dic(fit, data):
    """Deviance information criterion with ``p_D = mean D - D(theta_bar)``."""
    theta = _draws_of(fit)
    dev = -2.0 * _loglik(theta, data).sum(axis=1)
    d_bar = -2.0 * _loglik(theta.mean(axis=0), data).sum()
    p_d = float(np.mean(dev) - d_bar)
    return InformationCriterion(float(d_bar + 2.0 * p_d), p_d, float(d_bar))


def waic(fit, data):
    """Widely applicable information criterion on the deviance scale.

    ``p_waic`` uses the sample variance across draws (zero for one draw).
    """
    theta = _draws_of(fit)
    ll = _loglik(theta, data)
    S = ll.shape[0]
    lppd = float(np.sum(logsumexp(ll, axis=0) - np.log(S)))
    p_waic = float(np.sum(np.var(ll, axis=0, ddof=1))) if S > 1 else 0.0
    return InformationCriterion(-2.0 * (lppd - p_waic), p_waic, lppd)


def select_model(scores: Sequence[ValidationScore]):
    """Model id with the lowest score; ties go to smaller ``p`` then smaller id."""
    if not scores:
        raise UsageError("no scores to select from")
    if len({s.method for s in scores}) != 1:
        raise UsageError("scores must all come from one method")
    bad = [s.model_id for s in scores if not s.valid]
    if bad:
        raise UsageError(f"invalid scores for model(s): {bad}")
    big = float("inf")
    best = min(scores, key=lambda s: (s.value, big if s.p is None else s.p, s.model_id))
    return best.model_id
