"""Simulated tiered models and the PC-stable versus COPC-stable comparison."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.special import expit

from .citest import FisherZ, TieredDataset
from .errors import CopcError, InputError
from .graph import (
    PDAG,
    WeightedDAG,
    count_edge_kinds,
    cpdag_of,
    descendants,
    make_vertices,
    shd,
    tiered_cpdag_of,
)
from .ida import adjusted_effect, ambiguities, estimate_effects
from .pc import LearnConfig, run

log = logging.getLogger(__name__)

AR_MODES = ("edges", "residual")
TARGETS = ("tiered", "cpdag")


@dataclass(frozen=True)
class SimScenario:
    """One simulation setting.

    ``edge_prob`` and ``outcome_edge_prob`` default to ``2 / (p_per_visit * n_visits)``.
    Edge weights are ``+-U(weight_low, weight_high)``.  In ``ar_mode="edges"``
    each biomarker carries explicit ``X.vt -> X.v(t+1)`` edges of weight
    ``rho`` with innovation variance ``(1 - rho**2) * sigma2``; in
    ``"residual"`` mode the structural noise itself is AR(1) across visits.
    """

    p_per_visit: int = 8
    n_visits: int = 4
    n_obs: int = 1000
    rho: float = 0.5
    sigma2: float = 1.0
    edge_prob: float | None = None
    outcome_edge_prob: float | None = None
    outcome_tiers: int = 2
    weight_low: float = 0.1
    weight_high: float = 1.0
    alpha: float = 0.02
    n_replicates: int = 100
    master_seed: int = 0
    ar_mode: str = "edges"
    target: str = "tiered"
    shd_mode: str = "full"
    effects: bool = False
    mc_n: int = 200_000

    def __post_init__(self) -> None:
        for name in ("p_per_visit", "n_visits", "n_obs", "n_replicates", "mc_n", "outcome_tiers"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be positive")
        if not 0 <= self.rho < 1:
            raise InputError(f"rho must lie in [0, 1) for a positive definite covariance; got rho={self.rho}")
        if self.sigma2 <= 0:
            raise InputError("sigma2 must be positive")
        for name in ("edge_prob", "outcome_edge_prob"):
            v = getattr(self, name)
            if v is not None and not 0 <= v <= 1:
                raise InputError(f"{name} must lie in [0, 1]")
        if not 0 <= self.weight_low <= self.weight_high:
            raise InputError("need 0 <= weight_low <= weight_high")
        if not 0 < self.alpha < 1:
            raise InputError("alpha must lie in (0, 1)")
        if self.ar_mode not in AR_MODES:
            raise InputError(f"ar_mode must be one of {AR_MODES}")
        if self.target not in TARGETS:
            raise InputError(f"target must be one of {TARGETS}")
        if self.shd_mode not in ("full", "adjacency-only"):
            raise InputError("shd_mode must be 'full' or 'adjacency-only'")

    @property
    def resolved_edge_prob(self) -> float:
        if self.edge_prob is not None:
            return self.edge_prob
        return min(1.0, 2.0 / (self.p_per_visit * self.n_visits))

    @property
    def resolved_outcome_edge_prob(self) -> float:
        if self.outcome_edge_prob is not None:
            return self.outcome_edge_prob
        return self.resolved_edge_prob

    def resolved(self) -> dict:
        d = dataclasses.asdict(self)
        d["edge_prob"] = self.resolved_edge_prob
        d["outcome_edge_prob"] = self.resolved_outcome_edge_prob
        return d

    @classmethod
    def from_mapping(cls, values: dict) -> "SimScenario":
        """Build from string values (scenario files, CLI overrides)."""
        kinds = {f.name: f.type for f in dataclasses.fields(cls)}
        kw = {}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in kinds:
                raise InputError(f"unknown scenario key {key!r}")
            kw[key] = _coerce(raw, kinds[key], key)
        return cls(**kw)


def _coerce(raw, kind: str, key: str):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if "None" in kind and text.lower() in ("", "none", "default"):
            return None
        if kind.startswith("bool"):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind.startswith("int"):
            return int(text)
        if kind.startswith("float"):
            return float(text)
    except ValueError:
        raise InputError(f"bad value {raw!r} for scenario key {key!r}") from None
    return text


@dataclass
class TrueModel:
    """Ground truth: weighted tiered DAG over covariates plus a binary outcome."""

    wdag: WeightedDAG
    noise_var: np.ndarray
    scenario: SimScenario

    @property
    def dag(self) -> PDAG:
        return self.wdag.dag

    @property
    def outcome(self) -> int:
        return self.dag.n - 1

    @property
    def covariates(self) -> list[int]:
        return list(range(self.dag.n - 1))

    @cached_property
    def cpdag(self) -> PDAG:
        return cpdag_of(self.dag)

    @cached_property
    def tiered_cpdag(self) -> PDAG:
        return tiered_cpdag_of(self.dag)

    def target(self, kind: str = "tiered") -> PDAG:
        return self.tiered_cpdag if kind == "tiered" else self.cpdag


def _covariate_vertices(sc: SimScenario):
    p, v = sc.p_per_visit, sc.n_visits
    names = [f"X{b + 1}.v{t}" for t in range(1, v + 1) for b in range(p)]
    tiers = [t for t in range(1, v + 1) for _ in range(p)]
    return names + ["Y"], tiers + [v + 1]


def generate_random_time_dag(scenario: SimScenario, seed) -> TrueModel:
    """Random weighted DAG respecting the visit order.

    Covariates are ordered by (visit, biomarker); an edge is only ever drawn
    from an earlier to a later position, so the result is acyclic and never
    points back in time.  The outcome's parents come from the last
    ``outcome_tiers`` visits.
    """
    sc = scenario
    rng = np.random.default_rng(seed)
    names, tiers = _covariate_vertices(sc)
    n_cov = len(names) - 1
    y = n_cov
    vertices = make_vertices(names, tiers, outcome=y)
    p = sc.p_per_visit
    weights: dict[tuple[int, int], float] = {}
    noise = np.full(n_cov + 1, sc.sigma2)
    noise[y] = 0.0

    ar_pairs = set()
    if sc.ar_mode == "edges" and sc.rho > 0:
        for k in range(n_cov - p):
            ar_pairs.add((k, k + p))
            weights[(k, k + p)] = sc.rho
            noise[k + p] = (1 - sc.rho**2) * sc.sigma2

    cands = [(u, v) for v in range(n_cov) for u in range(v) if (u, v) not in ar_pairs]
    keep = rng.random(len(cands)) < sc.resolved_edge_prob
    mags = rng.uniform(sc.weight_low, sc.weight_high, len(cands))
    signs = rng.choice((-1.0, 1.0), len(cands))
    for (u, v), k, m, s in zip(cands, keep, mags, signs):
        if k:
            weights[(u, v)] = float(m * s)

    first_tier = sc.n_visits - sc.outcome_tiers + 1
    ocands = [k for k in range(n_cov) if tiers[k] >= first_tier]
    keep = rng.random(len(ocands)) < sc.resolved_outcome_edge_prob
    mags = rng.uniform(sc.weight_low, sc.weight_high, len(ocands))
    signs = rng.choice((-1.0, 1.0), len(ocands))
    for u, k, m, s in zip(ocands, keep, mags, signs):
        if k:
            weights[(u, y)] = float(m * s)

    dag = PDAG.from_edges(vertices, directed=sorted(weights))
    return TrueModel(WeightedDAG(dag, dict(sorted(weights.items()))), noise, sc)


def _ar_noise(rng, n: int, visits: int, rho: float, sigma2: float) -> np.ndarray:
    lags = np.abs(np.subtract.outer(np.arange(visits), np.arange(visits)))
    cov = sigma2 * rho**lags
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise InputError(f"AR covariance is not positive definite for rho={rho}") from None
    return rng.standard_normal((n, visits)) @ chol.T


def generate_ar_data(model: TrueModel, n: int | None = None, seed=None) -> TieredDataset:
    """Sample the structural equations in topological (id) order."""
    sc = model.scenario
    n = sc.n_obs if n is None else n
    rng = np.random.default_rng(seed)
    g = model.dag
    n_cov = g.n - 1
    x = np.zeros((n, g.n))
    if sc.ar_mode == "residual":
        p = sc.p_per_visit
        eps = np.zeros((n, n_cov))
        for b in range(p):
            cols = [b + t * p for t in range(sc.n_visits)]
            eps[:, cols] = _ar_noise(rng, n, sc.n_visits, sc.rho, sc.sigma2)
    else:
        eps = rng.standard_normal((n, n_cov)) * np.sqrt(model.noise_var[:n_cov])
    w = model.wdag.weights
    for v in range(n_cov):
        col = eps[:, v].copy()
        for u in g.parents(v):
            col += w[(u, v)] * x[:, u]
        x[:, v] = col
    eta = np.zeros(n)
    for u in g.parents(n_cov):
        eta += w[(u, n_cov)] * x[:, u]
    x[:, n_cov] = (rng.random(n) < expit(eta)).astype(float)
    return TieredDataset(x, g.names, g.tiers, n_cov)


def true_effect(model: TrueModel, x: int, n_mc: int = 200_000, seed=0) -> float:
    """Effect of ``x`` on the outcome under the adjustment used by the estimator.

    Exactly zero when no directed path leads from ``x`` to the outcome;
    otherwise a Monte Carlo fit on a fresh sample adjusted for the true
    parents of ``x``.
    """
    return true_effects(model, n_mc, seed, [x])[x]


def true_effects(model: TrueModel, n_mc: int = 200_000, seed=0, covariates: Sequence[int] | None = None) -> dict[int, float]:
    covs = model.covariates if covariates is None else list(covariates)
    y = model.outcome
    need = [x for x in covs if y in descendants(model.dag, x)]
    out = {x: 0.0 for x in covs}
    if need:
        big = generate_ar_data(model, n_mc, seed)
        for x in need:
            out[x] = adjusted_effect(big, x, model.dag.parents(x))
    return out


@dataclass(frozen=True)
class Metrics:
    sensitivity: float
    specificity: float
    shd: int
    mse: float
    tp: int
    fp: int
    fn: int
    tn: int


def evaluate(
    est: PDAG,
    truth: TrueModel | PDAG,
    est_effects: Sequence[float] | None = None,
    true_effects: Sequence[float] | None = None,
    *,
    target: str = "tiered",
    shd_mode: str = "full",
) -> Metrics:
    """Adjacency confusion counts, SHD and effect MSE against the truth.

    ``mse`` averages ``(estimate - |true effect|)**2`` over covariates and is
    NaN when no effects are supplied.
    """
    ref = truth.target(target) if isinstance(truth, TrueModel) else truth
    d = shd(est, ref, mode=shd_mode)
    tp = fp = fn = tn = 0
    n = ref.n
    for a in range(n):
        for b in range(a + 1, n):
            t, e = ref.adjacent(a, b), est.adjacent(a, b)
            if t and e:
                tp += 1
            elif t:
                fn += 1
            elif e:
                fp += 1
            else:
                tn += 1
    sens = tp / (tp + fn) if tp + fn else math.nan
    specificity = tn / (tn + fp) if tn + fp else math.nan
    mse = math.nan
    if est_effects is not None and true_effects is not None:
        a = np.asarray(est_effects, dtype=float)
        b = np.abs(np.asarray(true_effects, dtype=float))
        if a.shape != b.shape:
            raise InputError("effect vectors differ in length")
        mse = float(np.mean((a - b) ** 2))
    return Metrics(sens, specificity, d, mse, tp, fp, fn, tn)


VARIANTS = ("pc-stable", "copc-stable")
METRIC_COLUMNS = (
    "sensitivity",
    "specificity",
    "shd",
    "mse",
    "mean_ambiguity",
    "directed",
    "undirected",
    "non_chronological",
    "ci_tests",
    "conflicts",
)


def replicate_seeds(master_seed: int, k: int) -> list[np.random.SeedSequence]:
    """Model, data and Monte Carlo seeds of replicate ``k``."""
    return np.random.SeedSequence([master_seed, k]).spawn(3)


def run_replicate(sc: SimScenario, k: int, variants: Sequence[str] = VARIANTS) -> list[dict]:
    s_model, s_data, s_mc = replicate_seeds(sc.master_seed, k)
    model = generate_random_time_dag(sc, s_model)
    data = generate_ar_data(model, sc.n_obs, s_data)
    test = FisherZ(data, sc.alpha)
    truth_eff = None
    if sc.effects:
        te = true_effects(model, sc.mc_n, s_mc)
        truth_eff = [te[x] for x in model.covariates]
    rows = []
    for variant in variants:
        res = run(data, LearnConfig(alpha=sc.alpha, variant=variant), test=test)
        est_eff = None
        if sc.effects:
            est_eff = [s.lower_bound for _, s in estimate_effects(data, res.cpdag)]
        m = evaluate(res.cpdag, model, est_eff, truth_eff, target=sc.target, shd_mode=sc.shd_mode)
        kinds = count_edge_kinds(res.cpdag)
        rows.append(
            {
                "replicate": k,
                "variant": variant,
                "sensitivity": m.sensitivity,
                "specificity": m.specificity,
                "shd": m.shd,
                "mse": m.mse,
                "mean_ambiguity": float(np.mean(ambiguities(res.cpdag, data.covariates))),
                "directed": kinds.directed,
                "undirected": kinds.undirected,
                "non_chronological": kinds.non_chronological,
                "ci_tests": res.n_tests,
                "conflicts": res.conflicts.count,
                "true_edges": len(model.dag),
            }
        )
    return rows


@dataclass
class ComparisonResult:
    scenario: SimScenario
    rows: list[dict]
    failed: list[int] = field(default_factory=list)

    def values(self, metric: str, variant: str) -> np.ndarray:
        return np.array([r[metric] for r in self.rows if r["variant"] == variant], dtype=float)

    def summary(self) -> dict:
        """Mean, sd and standard error per variant and metric (NaNs ignored)."""
        out = {}
        variants = sorted({r["variant"] for r in self.rows}, key=lambda v: VARIANTS.index(v) if v in VARIANTS else 99)
        for variant in variants:
            for metric in METRIC_COLUMNS:
                v = self.values(metric, variant)
                v = v[~np.isnan(v)]
                if v.size:
                    sd = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
                    out[(variant, metric)] = (float(np.mean(v)), sd, sd / math.sqrt(v.size))
                else:
                    out[(variant, metric)] = (math.nan, math.nan, math.nan)
        return out


def run_comparison(scenario: SimScenario, n_jobs: int = 1) -> ComparisonResult:
    """Replicates of PC-stable and COPC-stable on fresh models and data."""

    def one(k):
        try:
            return k, run_replicate(scenario, k)
        except CopcError as exc:
            log.warning("replicate %d failed: %s", k, exc)
            return k, None

    ks = range(scenario.n_replicates)
    if n_jobs == 1:
        results = [one(k) for k in ks]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs)(delayed(one)(k) for k in ks)
    rows, failed = [], []
    for k, r in results:
        if r is None:
            failed.append(k)
        else:
            rows.extend(r)
    return ComparisonResult(scenario, rows, failed)
