"""Gaussian conditional-independence tests and a d-separation oracle."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import InputError, NumericalError
from .graph import PDAG, Vertex, d_separated, make_vertices

log = logging.getLogger(__name__)


class SingularMatrixError(NumericalError):
    """Conditioning submatrix is (numerically) singular."""


@dataclass
class TieredDataset:
    """``n x p`` measurements with a tier per column and an optional binary outcome."""

    values: np.ndarray
    names: list[str]
    tiers: list[int]
    outcome: int | None = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        self.names = [str(s) for s in self.names]
        self.tiers = [int(t) for t in self.tiers]
        if self.values.ndim != 2:
            raise InputError("values must be a 2-d array")
        if self.values.shape[1] != len(self.names) or len(self.names) != len(self.tiers):
            raise InputError("values, names and tiers disagree on the column count")
        if len(set(self.names)) != len(self.names):
            raise InputError("duplicate column names")
        if np.isnan(self.values).any():
            raise InputError("dataset contains missing cells")
        if self.outcome is not None:
            y = self.values[:, self.outcome]
            if not np.isin(y, (0.0, 1.0)).all():
                raise InputError(f"outcome column {self.names[self.outcome]!r} is not binary 0/1")
            top = max((t for k, t in enumerate(self.tiers) if k != self.outcome), default=-1)
            if self.tiers[self.outcome] <= top:
                raise InputError("outcome tier must exceed every covariate tier")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def covariates(self) -> list[int]:
        return [k for k in range(self.p) if k != self.outcome]

    def vertices(self) -> tuple[Vertex, ...]:
        return make_vertices(self.names, self.tiers, self.outcome)

    def rows(self, index: Sequence[int] | np.ndarray) -> "TieredDataset":
        return TieredDataset(self.values[np.asarray(index)], list(self.names), list(self.tiers), self.outcome)

    def degenerate_columns(self) -> list[str]:
        sd = self.values.std(axis=0)
        return [self.names[k] for k in np.flatnonzero(sd == 0)]


@dataclass(frozen=True)
class CITestResult:
    r: float
    statistic: float
    p_value: float
    independent: bool


def correlation_matrix(d: TieredDataset) -> np.ndarray:
    bad = d.degenerate_columns()
    if bad:
        raise InputError(f"column {bad[0]!r} has zero variance")
    c = np.corrcoef(d.values, rowvar=False)
    c = np.clip((c + c.T) / 2, -1.0, 1.0)
    np.fill_diagonal(c, 1.0)
    return c


def partial_correlation(corr: np.ndarray, i: int, j: int, given: Iterable[int] = ()) -> float:
    """Partial correlation of ``i`` and ``j`` given ``given`` from the submatrix inverse."""
    s = list(given)
    if i == j or i in s or j in s:
        raise ValueError("i, j must differ and lie outside the conditioning set")
    if not s:
        return float(corr[i, j])
    idx = [i, j, *s]
    sub = corr[np.ix_(idx, idx)]
    try:
        chol = np.linalg.cholesky(sub)
    except np.linalg.LinAlgError:
        raise SingularMatrixError(f"conditioning submatrix for ({i}, {j} | {s}) is singular") from None
    if np.min(np.diag(chol)) ** 2 < 1e-12:
        raise SingularMatrixError(f"conditioning submatrix for ({i}, {j} | {s}) is near singular")
    prec = np.linalg.inv(sub)
    r = -prec[0, 1] / math.sqrt(prec[0, 0] * prec[1, 1])
    return float(min(1.0, max(-1.0, r)))


def fisher_z_test(r: float, n: int, s: int, alpha: float) -> CITestResult:
    """Fisher z test of zero partial correlation.

    The statistic is ``sqrt(n - s - 3) * |atanh(r)|``, two-sided normal p-value.
    """
    df = n - s - 3
    if df <= 0:
        raise InputError(f"n={n} is too small for a conditioning set of size {s}")
    if not abs(r) < 1:
        return CITestResult(r, math.inf, 0.0, False)
    stat = math.sqrt(df) * abs(math.atanh(r))
    p = float(min(1.0, 2.0 * ndtr(-stat)))
    return CITestResult(r, stat, p, p > alpha)


class FisherZ:
    """Fisher-z test over a dataset's correlation matrix; results are cached.

    A singular conditioning submatrix is reported as dependence (p = 0).
    """

    def __init__(self, data: TieredDataset, alpha: float) -> None:
        self.corr = correlation_matrix(data)
        self.n = data.n
        self.alpha = alpha
        self.singular = 0
        self._cache: dict[tuple, CITestResult] = {}

    def __call__(self, i: int, j: int, given: Iterable[int]) -> CITestResult:
        s = tuple(sorted(given))
        a, b = (i, j) if i < j else (j, i)
        key = (a, b, s)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        try:
            r = partial_correlation(self.corr, a, b, s)
        except SingularMatrixError as exc:
            self.singular += 1
            log.warning("%s; treating as dependent", exc)
            res = CITestResult(math.nan, math.inf, 0.0, False)
        else:
            res = fisher_z_test(r, self.n, len(s), self.alpha)
        self._cache[key] = res
        return res


class DSeparationOracle:
    """Perfect CI test read off a known DAG."""

    def __init__(self, dag: PDAG) -> None:
        self.dag = dag
        self._cache: dict[tuple, CITestResult] = {}

    def __call__(self, i: int, j: int, given: Iterable[int]) -> CITestResult:
        s = tuple(sorted(given))
        key = (min(i, j), max(i, j), s)
        hit = self._cache.get(key)
        if hit is None:
            sep = d_separated(self.dag, i, j, s)
            hit = CITestResult(0.0 if sep else 1.0, 0.0 if sep else math.inf, 1.0 if sep else 0.0, sep)
            self._cache[key] = hit
        return hit
