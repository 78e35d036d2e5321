import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtsae import rng
from dtsae.errors import ShapeError, UsageError
from dtsae.model import DirectEstimateSet, FayHerriotFit, PosteriorDraws
from dtsae.thinning import RepeatPlan, thin
from dtsae.validation import (
    DIC,
    DT_MSE,
    DT_NLL,
    ESIM,
    BlupFitter,
    ValidationScore,
    dic,
    esim_score,
    mse_estimate,
    mse_terms,
    nll_score,
    nll_terms,
    repeated_validate,
    select_model,
    waic,
)

LOG2PI = np.log(2 * np.pi)


def _fit_with(theta_draws):
    theta = np.atleast_2d(np.asarray(theta_draws, dtype=float))
    S = theta.shape[0]
    draws = PosteriorDraws(np.zeros((S, 1)), np.ones(S), theta)
    return FayHerriotFit(np.zeros(1), 1.0, np.full(theta.shape[1], 0.5), theta.mean(0), "gibbs", draws)


# -- MSE estimator -----------------------------------------------------------


def test_mse_estimate_example():
    assert mse_estimate([2.0], [1.0], [1.0], 0.5) == pytest.approx(-2.0)
    with pytest.raises(ShapeError):
        mse_estimate([1.0, 2.0], [1.0], [1.0], 0.5)


def test_mse_estimate_zero_for_oracle_estimator():
    n = 1_000_000
    theta = np.random.default_rng(0).normal(size=n)
    ds = DirectEstimateSet(theta + np.random.default_rng(1).standard_normal(n), np.ones(n))
    sp = thin(ds, 0.5, rng.stream(0, "t"))
    t = mse_terms(theta, sp.y_test, ds.d, 0.5)
    assert abs(t.mean()) <= 3 * t.std() / np.sqrt(n)


def test_mse_estimate_unbiased_given_theta():
    # fixed theta: the target is the conditional thinned-data MSE
    # gamma(eps)^2 d/eps + (1 - gamma(eps))^2 (theta - x'beta)^2
    m, eps, n_rep = 25, 0.5, 40_000
    theta = np.linspace(-1.5, 1.5, m)
    g = np.random.default_rng(3)
    Y = theta + g.standard_normal((n_rep, m))
    fitter = BlupFitter(1.0, beta=[0.0])
    X = np.ones((m, 1))
    vals = np.empty(n_rep)
    for k in range(n_rep):
        ds = DirectEstimateSet(Y[k], np.ones(m))
        sp = thin(ds, eps, rng.stream(4, "t", k))
        vals[k] = mse_estimate(fitter(sp.training_data(ds), X), sp.y_test, ds.d, eps)
    gam = 1 / (1 + 1 / eps)
    target = np.mean(gam**2 / eps + (1 - gam) ** 2 * theta**2)
    assert abs(vals.mean() - target) <= 3 * vals.std(ddof=1) / np.sqrt(n_rep)


# -- NLL ---------------------------------------------------------------------


def test_nll_examples():
    eps, d, th = 0.3, 2.0, 1.7
    assert nll_score([th], [(1 - eps) * th], [d], eps) == pytest.approx(
        0.5 * np.log(2 * np.pi * (1 - eps) * d)
    )
    assert nll_score([0.0], [1.0], [1.0], 0.5) == pytest.approx(0.5 * np.log(np.pi) + 1.0)
    with pytest.raises(ValueError):
        nll_score([0.0], [1.0], [0.0], 0.5)


def test_nll_conditional_mean_is_weighted_mse():
    g = np.random.default_rng(5)
    m, eps, n = 6, 0.4, 400_000
    d = g.uniform(0.5, 2.0, m)
    theta = g.normal(size=m)
    theta_hat = theta + g.normal(0, 0.5, m)
    y2 = (1 - eps) * theta + np.sqrt((1 - eps) * d) * g.standard_normal((n, m))
    ll = -nll_terms(np.broadcast_to(theta_hat, y2.shape), y2, np.broadcast_to(d, y2.shape), eps).sum(1)
    C = -m / 2 - 0.5 * np.sum(np.log(2 * np.pi * (1 - eps) * d))
    target = C - 0.5 * np.sum((1 - eps) / d * (theta_hat - theta) ** 2)
    assert abs(ll.mean() - target) <= 3 * ll.std() / np.sqrt(n)


# -- repeated thinning -------------------------------------------------------


def _data(m=25, seed=0):
    g = np.random.default_rng(seed)
    return DirectEstimateSet(g.normal(size=m) + g.standard_normal(m), np.ones(m))


def test_repeated_single_repeat_is_one_thin():
    ds = _data()
    X = np.ones((ds.m, 1))
    fitter = BlupFitter(1.0)
    [score] = repeated_validate(ds, [X], RepeatPlan(1, 0.6, 7), fitter)
    sp = thin(ds, 0.6, rng.stream(7, "thin", 0))
    expected = mse_estimate(fitter(sp.training_data(ds), X), sp.y_test, ds.d, 0.6)
    assert score.value == expected
    assert score.n_repeats == 1 and score.epsilon == 0.6 and score.method == DT_MSE


def test_repeated_duplicate_models_score_identically():
    ds = _data(seed=2)
    X = np.column_stack([np.ones(ds.m), np.arange(ds.m)])
    for kind in (DT_MSE, DT_NLL):
        a, b = repeated_validate(ds, [X, X], RepeatPlan(4, 0.5, 3), BlupFitter(0.8), kind)
        assert np.array_equal(a.per_repeat, b.per_repeat)
        assert a.value == b.value == pytest.approx(np.mean(a.per_repeat))
        assert a.model_id != b.model_id


def test_repeated_variance_scales_inverse_with_repeats():
    ds = _data(seed=4)
    X = np.ones((ds.m, 1))
    fitter = BlupFitter(1.0, beta=[0.0])

    def spread(R):
        vals = [repeated_validate(ds, [X], RepeatPlan(R, 0.5, 1000 * R + k), fitter)[0].value
                for k in range(200)]
        return np.var(vals, ddof=1)

    ratio = spread(1) / spread(4)
    assert 3.0 <= ratio <= 5.0


def test_repeated_records_failures():
    ds = _data()
    calls = []

    def flaky(data, X, seed):
        calls.append(seed)
        if len(calls) == 2:
            raise RuntimeError("boom")
        return data.y

    [score] = repeated_validate(ds, [np.ones((ds.m, 1))], RepeatPlan(3, 0.5), flaky)
    assert not score.valid and np.isnan(score.value)
    assert score.failures[0][0] == 1
    assert np.isnan(score.per_repeat[1]) and np.isfinite(score.per_repeat[0])


def test_repeated_validate_rejects_bad_kind():
    with pytest.raises(UsageError):
        repeated_validate(_data(), [np.ones((25, 1))], RepeatPlan(1, 0.5), BlupFitter(1.0), "esim")


# -- ESIM --------------------------------------------------------------------


def test_esim_degenerate_fitters():
    g = np.random.default_rng(6)
    m = 40
    ds = DirectEstimateSet(g.normal(size=m), g.uniform(0.5, 1.5, m))
    X = np.ones((m, 1))
    echo = esim_score(ds, X, 2000, lambda data, X, seed: data.y, seed=1)
    se = echo.per_repeat.std(ddof=1) / np.sqrt(2000)
    assert abs(echo.value - ds.d.mean()) <= 3 * se
    assert echo.method == ESIM and echo.n_repeats == 2000
    assert esim_score(ds, X, 5, lambda data, X, seed: ds.y).value == 0.0
    one = esim_score(ds, X, 1, lambda data, X, seed: data.y, seed=9)
    z = ds.y + np.sqrt(ds.d) * rng.stream(9, "esim", 0).standard_normal(m)
    assert one.value == pytest.approx(np.mean((z - ds.y) ** 2))
    with pytest.raises(UsageError):
        esim_score(ds, X, 0, lambda data, X, seed: data.y)


# -- information criteria ----------------------------------------------------


def test_dic_waic_hand_examples():
    ds = DirectEstimateSet([0.0], [1.0])
    fit = _fit_with([[-1.0], [1.0]])
    ic = dic(fit, ds)
    assert ic.fit_term == pytest.approx(LOG2PI)
    assert ic.penalty == pytest.approx(1.0)
    assert ic.value == pytest.approx(LOG2PI + 2)
    w = waic(fit, ds)
    assert w.fit_term == pytest.approx(-0.5 - 0.5 * LOG2PI)
    assert w.penalty == pytest.approx(0.0, abs=1e-15)
    assert w.value == pytest.approx(1 + LOG2PI)


def test_single_or_identical_draws_have_no_penalty():
    ds = DirectEstimateSet([0.3, -1.0], [0.5, 2.0])
    th = [0.1, -0.4]
    dev = -2 * np.sum(-0.5 * (LOG2PI + np.log(ds.d) + (ds.y - th) ** 2 / ds.d))
    for draws in ([th], [th] * 5):
        fit = _fit_with(draws)
        assert dic(fit, ds).penalty == pytest.approx(0.0, abs=1e-12)
        assert dic(fit, ds).value == pytest.approx(dev)
        assert waic(fit, ds).penalty == pytest.approx(0.0, abs=1e-12)
        assert waic(fit, ds).value == pytest.approx(dev)


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1))
def test_information_criteria_ignore_draw_order(seed):
    g = np.random.default_rng(seed)
    ds = DirectEstimateSet(g.normal(size=4), g.uniform(0.3, 2, 4))
    draws = g.normal(size=(30, 4))
    a, b = _fit_with(draws), _fit_with(draws[g.permutation(30)])
    assert dic(a, ds).value == pytest.approx(dic(b, ds).value, rel=1e-12)
    assert waic(a, ds).value == pytest.approx(waic(b, ds).value, rel=1e-12)


def test_information_criteria_need_draws():
    fit = FayHerriotFit(np.zeros(1), 1.0, np.ones(1) / 2, np.zeros(1), "blup_known_sigma2")
    with pytest.raises(UsageError):
        dic(fit, DirectEstimateSet([0.0], [1.0]))
    with pytest.raises(UsageError):
        waic(fit, DirectEstimateSet([0.0], [1.0]))


# -- selection ---------------------------------------------------------------


def _score(v, p, name=None, method=DIC):
    return ValidationScore(method, name or f"p{p}", v, p=p)


def test_select_model_examples():
    assert select_model([_score(3.0, 1), _score(1.0, 2), _score(2.0, 3)]) == "p2"
    assert select_model([_score(1.0, 9), _score(1.0, 6)]) == "p6"
    assert select_model([_score(5.0, 4)]) == "p4"
    assert select_model([_score(1.0, 3, "b"), _score(1.0, 3, "a")]) == "a"


def test_select_model_errors():
    with pytest.raises(UsageError):
        select_model([])
    with pytest.raises(UsageError):
        select_model([_score(1.0, 1), _score(1.0, 2, method=ESIM)])
    with pytest.raises(UsageError):
        select_model([_score(float("nan"), 1)])
