"""Logistic regression with Firth's bias-reducing penalty.

The penalized log-likelihood is ``l(b) + 0.5 * log det I(b)`` with
``I(b) = X' W X``, ``W = diag(pi (1 - pi))``.  It is maximized by Newton
steps on the modified score

    U*_r = sum_i x_ir (y_i - pi_i + h_i (1/2 - pi_i))

where ``h`` is the diagonal of ``W^1/2 X I^-1 X' W^1/2``.  The penalty keeps
the estimates finite under complete or quasi-complete separation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import InputError, NumericalError

log = logging.getLogger(__name__)

RIDGE = 1e-8


@dataclass
class FirthFit:
    coefficients: np.ndarray
    std_errors: np.ndarray
    converged: bool
    iterations: int
    penalized_loglik: float
    ridge_used: bool = False
    history: list[float] = field(default_factory=list, repr=False)

    def to_raw_scale(self, mean: np.ndarray, sd: np.ndarray) -> np.ndarray:
        """Back-transform coefficients fitted on standardized regressors."""
        b = self.coefficients
        slopes = b[1:] / sd
        return np.concatenate([[b[0] - np.sum(slopes * mean)], slopes])


def standardize(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    mean = x.mean(axis=0)
    sd = x.std(axis=0)
    if np.any(sd == 0):
        raise InputError("cannot standardize a constant regressor")
    return (x - mean) / sd, mean, sd


def design(x: np.ndarray, scale: bool = True) -> np.ndarray:
    """Intercept column plus (optionally standardized) regressors."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if scale and x.shape[1]:
        x = standardize(x)[0]
    return np.column_stack([np.ones(x.shape[0]), x])


def _information(X: np.ndarray, w: np.ndarray) -> np.ndarray:
    return X.T @ (X * w[:, None])


def _factor(info: np.ndarray) -> tuple[np.ndarray, bool]:
    """Cholesky factor of the information, retrying once with a small ridge."""
    try:
        return np.linalg.cholesky(info), False
    except np.linalg.LinAlgError:
        pass
    try:
        chol = np.linalg.cholesky(info + RIDGE * np.eye(info.shape[0]))
    except np.linalg.LinAlgError:
        raise NumericalError("Fisher information is singular") from None
    log.info("Fisher information near singular; added ridge %g", RIDGE)
    return chol, True


def penalized_loglik(X: np.ndarray, y: np.ndarray, beta: np.ndarray) -> float:
    eta = X @ beta
    pi = expit(eta)
    ll = float(np.sum(y * eta - np.logaddexp(0.0, eta)))
    chol, _ = _factor(_information(X, pi * (1 - pi)))
    return ll + float(np.sum(np.log(np.diag(chol))))


def modified_score(X: np.ndarray, y: np.ndarray, beta: np.ndarray) -> np.ndarray:
    pi = expit(X @ beta)
    w = pi * (1 - pi)
    chol, _ = _factor(_information(X, w))
    a = np.linalg.solve(chol, (X * np.sqrt(w)[:, None]).T)
    h = np.sum(a * a, axis=0)
    return X.T @ (y - pi + h * (0.5 - pi))


def fit_firth_logistic(
    X: np.ndarray,
    y: np.ndarray,
    tol: float = 1e-8,
    max_iter: int = 50,
    max_halfstep: int = 10,
    max_stepsize: float = 5.0,
) -> FirthFit:
    """Fit a Firth-penalized logistic regression.

    Parameters
    ----------
    X : (n, k+1) array
        Design matrix; include the intercept column yourself (see :func:`design`).
    y : (n,) array of 0/1
    tol : float
        Convergence threshold on the largest modified-score component.
    max_iter, max_halfstep : int
        Newton iteration cap and step-halvings allowed per iteration.
    max_stepsize : float
        Cap on any single coefficient update.

    Returns
    -------
    FirthFit
        ``converged`` is False when the cap is hit; the last iterate is kept.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise InputError("X must be (n, k+1) and y of length n")
    n, k1 = X.shape
    if n < k1 + 1:
        raise InputError(f"need at least {k1 + 1} rows for {k1 - 1} regressors, got {n}")
    if not np.isin(y, (0.0, 1.0)).all():
        raise InputError("y must be binary 0/1")
    if y.min() == y.max():
        raise InputError("y contains a single class")

    def state(beta):
        eta = X @ beta
        pi = expit(eta)
        w = pi * (1 - pi)
        chol, ridged = _factor(_information(X, w))
        ll = float(np.sum(y * eta - np.logaddexp(0.0, eta)))
        pl = ll + float(np.sum(np.log(np.diag(chol))))
        return pi, w, chol, ridged, pl

    beta = np.zeros(k1)
    pi, w, chol, ridged, pl = state(beta)
    history = [pl]
    ridge_used = ridged
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        a = np.linalg.solve(chol, (X * np.sqrt(w)[:, None]).T)
        h = np.sum(a * a, axis=0)
        score = X.T @ (y - pi + h * (0.5 - pi))
        if np.max(np.abs(score)) < tol:
            converged = True
            it -= 1
            break
        step = np.linalg.solve(chol.T, np.linalg.solve(chol, score))
        biggest = np.max(np.abs(step))
        if biggest > max_stepsize:
            step *= max_stepsize / biggest
        for _ in range(max_halfstep + 1):
            cand = beta + step
            try:
                new = state(cand)
            except NumericalError:
                step = step / 2
                continue
            if new[4] >= pl - 1e-12 * max(1.0, abs(pl)):
                break
            step = step / 2
        else:
            log.info("step-halving exhausted at iteration %d", it)
            break
        beta = cand
        pi, w, chol, ridged, pl = new
        ridge_used |= ridged
        history.append(pl)
    else:
        a = np.linalg.solve(chol, (X * np.sqrt(w)[:, None]).T)
        h = np.sum(a * a, axis=0)
        score = X.T @ (y - pi + h * (0.5 - pi))
        converged = bool(np.max(np.abs(score)) < tol)

    if not np.all(np.isfinite(beta)):
        raise NumericalError("Firth iterations produced non-finite coefficients")
    inv_chol = np.linalg.inv(chol)
    se = np.sqrt(np.sum(inv_chol * inv_chol, axis=0))
    return FirthFit(beta, se, converged, it, pl, ridge_used, history)
