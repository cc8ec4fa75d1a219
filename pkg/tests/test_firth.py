import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from copc.errors import InputError
from copc.firth import (
    design,
    fit_firth_logistic,
    modified_score,
    penalized_loglik,
    standardize,
)


def pl_oracle(X, y, b):
    """Penalized log-likelihood written out independently of the package."""
    eta = X @ b
    p = 1 / (1 + np.exp(-eta))
    ll = np.sum(y * eta) - np.sum(np.log1p(np.exp(eta)))
    info = X.T @ np.diag(p * (1 - p)) @ X
    return ll + 0.5 * np.linalg.slogdet(info)[1]


def grid_search(X, y, center, width=3.0, rounds=9, points=41):
    best = np.asarray(center, dtype=float)
    for _ in range(rounds):
        axes = [np.linspace(c - width, c + width, points) for c in best]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(best))
        vals = [pl_oracle(X, y, b) for b in mesh]
        best = mesh[int(np.argmax(vals))]
        width *= 4 / points
    return best


def newton_mle(X, y, iters=50):
    b = np.zeros(X.shape[1])
    for _ in range(iters):
        p = expit(X @ b)
        w = p * (1 - p)
        info = X.T @ (X * w[:, None])
        try:
            b = b + np.linalg.solve(info, X.T @ (y - p))
        except np.linalg.LinAlgError:
            break
    return b


SEP_X = np.array([0, 0, 0, 0, 1, 1, 1, 1], dtype=float)
SEP_Y = SEP_X.copy()


def test_separation_closed_form():
    # with one binary regressor the Firth fit adds 1/2 to each cell of the 2x2 table
    fit = fit_firth_logistic(design(SEP_X, scale=False), SEP_Y)
    assert fit.converged and np.all(np.isfinite(fit.coefficients))
    assert fit.coefficients[0] == pytest.approx(math.log(0.5 / 4.5), abs=1e-7)
    assert fit.coefficients[1] == pytest.approx(math.log(81), abs=1e-7)
    assert math.log(81) == pytest.approx(4.394449, abs=1e-6)


def test_separation_matches_grid_search():
    X = design(SEP_X, scale=False)
    fit = fit_firth_logistic(X, SEP_Y)
    grid = grid_search(X, SEP_Y, [0.0, 0.0], width=6.0)
    assert np.max(np.abs(fit.coefficients - grid)) < 1e-3


def test_unpenalized_newton_diverges_on_separation():
    with np.errstate(all="ignore"):
        b = newton_mle(design(SEP_X, scale=False), SEP_Y, iters=50)
    assert not np.all(np.isfinite(b)) or np.max(np.abs(b)) > 10


def test_close_to_mle_on_large_sample(rng):
    n = 5000
    x = rng.standard_normal((n, 3))
    y = (rng.random(n) < expit(0.3 + x @ [0.8, -0.5, 0.2])).astype(float)
    X = design(x)
    fit = fit_firth_logistic(X, y)
    mle = newton_mle(X, y)
    assert fit.converged
    assert np.max(np.abs(fit.coefficients - mle)) < 0.05


def test_null_model(rng):
    n = 4000
    x = rng.standard_normal(n)
    y = (rng.random(n) < 0.5).astype(float)
    fit = fit_firth_logistic(design(x), y)
    assert abs(fit.coefficients[1]) < 2 * fit.std_errors[1]


def test_score_is_gradient_of_penalized_loglik(rng):
    n = 60
    x = rng.standard_normal((n, 2))
    y = (rng.random(n) < expit(x @ [1.0, -1.0])).astype(float)
    X = design(x)
    for b in (np.zeros(3), np.array([0.2, 0.5, -0.7])):
        grad = np.array(
            [
                (penalized_loglik(X, y, b + h) - penalized_loglik(X, y, b - h)) / (2 * 1e-6)
                for h in np.eye(3) * 1e-6
            ]
        )
        assert np.allclose(modified_score(X, y, b), grad, rtol=1e-5, atol=1e-6)
        assert penalized_loglik(X, y, b) == pytest.approx(pl_oracle(X, y, b), abs=1e-9)
    fit = fit_firth_logistic(X, y)
    assert np.max(np.abs(modified_score(X, y, fit.coefficients))) < 1e-8


def test_row_permutation_invariance(rng):
    n = 80
    x = rng.standard_normal((n, 2))
    y = (rng.random(n) < expit(x[:, 0])).astype(float)
    X = design(x)
    a = fit_firth_logistic(X, y)
    perm = rng.permutation(n)
    b = fit_firth_logistic(X[perm], y[perm])
    assert np.allclose(a.coefficients, b.coefficients, atol=1e-10)


def test_std_errors_and_raw_scale(rng):
    n = 300
    x = rng.standard_normal((n, 2)) * [2.0, 0.5] + [1.0, -3.0]
    y = (rng.random(n) < expit(0.5 * x[:, 0] - x[:, 1] - 3)).astype(float)
    z, mean, sd = standardize(x)
    fit = fit_firth_logistic(design(z, scale=False), y)
    raw = fit_firth_logistic(design(x, scale=False), y)
    assert np.allclose(fit.to_raw_scale(mean, sd), raw.coefficients, atol=1e-6)
    X = design(z, scale=False)
    p = expit(X @ fit.coefficients)
    info = X.T @ (X * (p * (1 - p))[:, None])
    assert np.allclose(fit.std_errors, np.sqrt(np.diag(np.linalg.inv(info))), rtol=1e-8)


@st.composite
def small_problems(draw):
    n = draw(st.integers(6, 40))
    k = draw(st.integers(1, 3))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, k))
    y = (rng.random(n) < expit(draw(st.floats(-4, 4)) * x[:, 0])).astype(float)
    y[0], y[1] = 0.0, 1.0
    if draw(st.booleans()):
        y = (x[:, 0] > np.median(x[:, 0])).astype(float)  # completely separated
        if y.min() == y.max():
            y[0] = 1 - y[0]
    return x, y


@given(small_problems())
@settings(max_examples=150, deadline=None)
def test_finite_and_monotone(problem):
    x, y = problem
    if len(y) < x.shape[1] + 2:
        return
    fit = fit_firth_logistic(design(x), y)
    assert np.all(np.isfinite(fit.coefficients))
    h = np.array(fit.history)
    assert np.all(np.diff(h) >= -1e-9 * np.maximum(1, np.abs(h[:-1])))
    if fit.converged:
        assert np.max(np.abs(modified_score(design(x), y, fit.coefficients))) < 1e-8


def test_input_errors():
    X = design(SEP_X, scale=False)
    with pytest.raises(InputError):
        fit_firth_logistic(X, np.zeros(8))
    with pytest.raises(InputError):
        fit_firth_logistic(X, SEP_Y * 2)
    with pytest.raises(InputError):
        fit_firth_logistic(X[:2], SEP_Y[:2])
    with pytest.raises(InputError):
        standardize(np.ones((5, 1)))


def test_collinear_regressors_use_ridge(rng):
    x = rng.standard_normal(50)
    X = np.column_stack([np.ones(50), x, x])
    y = (rng.random(50) < expit(x)).astype(float)
    fit = fit_firth_logistic(X, y)
    assert fit.ridge_used and np.all(np.isfinite(fit.coefficients))
