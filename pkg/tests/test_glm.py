import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import logit

from prorep.glm import (
    PROB_CLAMP,
    CompleteSeparation,
    GlmFit,
    fit_pooled_logistic,
    group_rows,
    loglik,
    predict_prob,
    score,
)


def simulated(rng, n=400):
    X = np.column_stack([np.ones(n), rng.normal(size=n), rng.integers(0, 2, n)])
    p = 1 / (1 + np.exp(-(X @ [-0.5, 0.8, 0.4])))
    y = (rng.uniform(size=n) < p).astype(float)
    return X, y


def test_intercept_only_is_logit_of_mean(rng):
    y = (rng.uniform(size=300) < 0.3).astype(float)
    fit = fit_pooled_logistic(np.ones((300, 1)), y)
    assert fit.coefficients[0] == pytest.approx(logit(y.mean()), abs=1e-12)


def test_saturated_fit_reproduces_stratum_frequencies(rng):
    n = 1000
    g = rng.integers(0, 4, n)
    y = (rng.uniform(size=n) < np.array([0.1, 0.4, 0.6, 0.85])[g]).astype(float)
    w = rng.uniform(0.5, 2.0, n)
    X = (g[:, None] == np.arange(4)).astype(float)
    p = predict_prob(fit_pooled_logistic(X, y, w), np.eye(4))
    freq = np.array([np.sum(w * y * (g == j)) / np.sum(w * (g == j)) for j in range(4)])
    assert np.max(np.abs(p - freq)) < 1e-12


def test_score_at_solution(rng):
    X, y = simulated(rng)
    w = rng.uniform(0.2, 3.0, len(y))
    fit = fit_pooled_logistic(X, y, w)
    assert fit.converged
    assert np.max(np.abs(score(fit.coefficients, X, y, w))) < 1e-8
    assert fit.max_score < 1e-8


def test_analytic_score_matches_finite_differences(rng):
    X, y = simulated(rng, 200)
    w = rng.uniform(0.2, 3.0, len(y))
    b = np.array([0.3, -0.2, 0.5])
    analytic = score(b, X, y, w)
    h = 1e-6
    numeric = np.array([(loglik(b + h * e, X, y, w) - loglik(b - h * e, X, y, w)) / (2 * h) for e in np.eye(3)])
    assert np.max(np.abs(analytic - numeric) / np.abs(analytic)) < 1e-6


def test_doubling_weights_leaves_estimate(rng):
    X, y = simulated(rng)
    a = fit_pooled_logistic(X, y).coefficients
    b = fit_pooled_logistic(X, y, np.full(len(y), 2.0)).coefficients
    assert np.allclose(a, b, atol=1e-10)


def test_frequency_weights_equal_duplication(rng):
    X, y = simulated(rng, 150)
    counts = rng.integers(0, 4, len(y))
    a = fit_pooled_logistic(X, y, counts.astype(float)).coefficients
    idx = np.repeat(np.arange(len(y)), counts)
    b = fit_pooled_logistic(X[idx], y[idx]).coefficients
    assert np.allclose(a, b, atol=1e-10)


@given(st.integers(0, 2**32 - 1))
def test_row_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    X, y = simulated(rng, 120)
    perm = rng.permutation(len(y))
    a = fit_pooled_logistic(X, y).coefficients
    b = fit_pooled_logistic(X[perm], y[perm]).coefficients
    assert np.allclose(a, b, atol=1e-9)


def test_prediction_clamp_and_zero_coefficients():
    fit = GlmFit(np.array([1.0]), True, 0, 0.0, ("x",), 0.0)
    p = predict_prob(fit, np.array([[40.0], [-40.0]]))
    assert p[0] == 1 - PROB_CLAMP and p[1] == PROB_CLAMP
    zero = GlmFit(np.zeros(2), True, 0, 0.0, ("a", "b"), 0.0)
    assert predict_prob(zero, np.ones((3, 2))).tolist() == [0.5] * 3


def test_width_mismatch():
    fit = GlmFit(np.zeros(2), True, 0, 0.0, ("a", "b"), 0.0)
    with pytest.raises(ValueError):
        fit.linear_predictor(np.ones((2, 3)))


def test_complete_separation_names_column(rng):
    x = rng.normal(size=200)
    X = np.column_stack([np.ones(200), x])
    y = (x > 0).astype(float)
    with pytest.raises(CompleteSeparation) as err:
        fit_pooled_logistic(X, y, columns=["(intercept)", "dose"])
    assert err.value.column == "dose"


def test_single_outcome_level_is_separation():
    with pytest.raises(CompleteSeparation):
        fit_pooled_logistic(np.ones((5, 1)), np.zeros(5))


def test_collinear_columns_are_aliased(rng):
    X, y = simulated(rng)
    Xa = np.column_stack([X, X[:, 1] * 2 + X[:, 0], np.zeros(len(y))])
    fit = fit_pooled_logistic(Xa, y, columns=["a", "b", "c", "d", "e"])
    assert set(fit.aliased) == {"d", "e"} or len(fit.aliased) == 2 and "e" in fit.aliased
    ref = fit_pooled_logistic(X, y)
    assert np.allclose(predict_prob(fit, Xa), predict_prob(ref, X), atol=1e-10)


def test_zero_weight_rows_are_ignored(rng):
    X, y = simulated(rng)
    w = np.ones(len(y))
    w[:50] = 0
    a = fit_pooled_logistic(X, y, w).coefficients
    b = fit_pooled_logistic(X[50:], y[50:]).coefficients
    assert np.allclose(a, b, atol=1e-10)


def test_row_groups_give_same_fit(rng):
    n = 2000
    X = np.column_stack([np.ones(n), rng.integers(0, 3, n), rng.integers(0, 2, n)]).astype(float)
    y = (rng.uniform(size=n) < 0.3).astype(float)
    w = rng.uniform(0.1, 2.0, n)
    g = group_rows(X, y)
    assert g is not None and len(g.y) <= 12
    assert np.array_equal(g.X[g.index], X) and np.array_equal(g.y[g.index], y)
    a = fit_pooled_logistic(X, y, w).coefficients
    b = fit_pooled_logistic(g.X, g.y, g.weights(w)).coefficients
    assert np.allclose(a, b, atol=1e-10)


def test_row_groups_skip_when_rows_distinct(rng):
    X = rng.normal(size=(50, 2))
    assert group_rows(X, np.zeros(50)) is None
