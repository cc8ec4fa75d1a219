"""Local IDA: adjusted effects of each covariate on a binary outcome.

For every locally valid parent set ``P`` of a covariate ``x`` the effect is
the Firth log-odds coefficient of standardized ``x`` in the regression of the
outcome on ``{x} | P``.  The multiset of these values bounds the causal
effect from below by its smallest absolute value.
"""

from __future__ import annotations

import itertools
import logging
import statistics
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .citest import TieredDataset
from .errors import InputError, NumericalError
from .firth import design, fit_firth_logistic
from .graph import PDAG

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EffectMultiset:
    covariate: int
    values: tuple[float, ...]
    parent_sets: tuple[frozenset[int], ...]
    skipped: int = 0


@dataclass(frozen=True)
class EffectSummary:
    covariate: int
    name: str
    tier: int
    lower_bound: float
    ambiguity: int
    median_effect: float


def _set_key(s: frozenset[int]):
    return (len(s), sorted(s))


def locally_valid_parent_sets(c: PDAG, x: int) -> list[frozenset[int]]:
    """Parent sets ``pa(x) | U`` for subsets ``U`` of undirected neighbours that add no collider at ``x``."""
    pa = set(c.parents(x))
    nb = sorted(c.neighbors(x))
    out = []
    for r in range(len(nb) + 1):
        for subset in itertools.combinations(nb, r):
            pool = pa.union(subset)
            if all(c.adjacent(u, w) for u in subset for w in pool if u != w):
                out.append(frozenset(pool))
    return sorted(out, key=_set_key)


def adjusted_effect(data: TieredDataset, x: int, parents: Iterable[int], outcome: int | None = None) -> float:
    """Standardized Firth log-odds coefficient of ``x`` adjusted for ``parents``.

    Zero when the outcome itself is among the parents.
    """
    y_col = data.outcome if outcome is None else outcome
    if y_col is None:
        raise InputError("dataset has no outcome column")
    parents = sorted(parents)
    if y_col in parents:
        return 0.0
    cols = [x, *parents]
    fit = fit_firth_logistic(design(data.values[:, cols]), data.values[:, y_col])
    if not fit.converged:
        raise NumericalError(f"Firth fit for {data.names[x]} | {parents} did not converge")
    return float(fit.coefficients[1])


def ida_multiset(
    data: TieredDataset,
    c: PDAG,
    x: int,
    outcome: int | None = None,
    cache: dict | None = None,
) -> EffectMultiset:
    y_col = data.outcome if outcome is None else outcome
    if y_col is None:
        raise InputError("dataset has no outcome column")
    if x == y_col:
        raise InputError("the outcome is not an exposure")
    values, used, skipped = [], [], 0
    for ps in locally_valid_parent_sets(c, x):
        key = (x, ps)
        try:
            if cache is not None and key in cache:
                theta = cache[key]
            else:
                theta = adjusted_effect(data, x, ps, y_col)
                if cache is not None:
                    cache[key] = theta
        except (NumericalError, InputError) as exc:
            skipped += 1
            log.warning("skipping parent set %s of %s: %s", sorted(ps), data.names[x], exc)
            continue
        values.append(theta)
        used.append(ps)
    if not values:
        raise NumericalError(f"every effect fit failed for covariate {data.names[x]}")
    return EffectMultiset(x, tuple(values), tuple(used), skipped)


def lower_bound(m: EffectMultiset, name: str = "", tier: int = 0) -> EffectSummary:
    if not m.values:
        raise ValueError("empty effect multiset")
    mags = [abs(v) for v in m.values]
    return EffectSummary(m.covariate, name, tier, min(mags), len(mags), float(statistics.median(mags)))


def rank_covariates(summaries: Sequence[EffectSummary]) -> list[EffectSummary]:
    """Descending lower bound; ties by covariate name."""
    return sorted(summaries, key=lambda s: (-s.lower_bound, s.name))


def estimate_effects(
    data: TieredDataset, c: PDAG, covariates: Sequence[int] | None = None
) -> list[tuple[EffectMultiset, EffectSummary]]:
    """Multiset and summary for each covariate, in covariate order."""
    cache: dict = {}
    covs = data.covariates if covariates is None else covariates
    out = []
    for x in covs:
        m = ida_multiset(data, c, x, cache=cache)
        out.append((m, lower_bound(m, data.names[x], data.tiers[x])))
    return out


def ambiguities(c: PDAG, covariates: Sequence[int]) -> np.ndarray:
    """Number of locally valid parent sets per covariate (no fitting)."""
    return np.array([len(locally_valid_parent_sets(c, x)) for x in covariates])
