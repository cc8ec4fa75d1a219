"""Stability ranking over subsamples and the per-comparison error bound."""

from __future__ import annotations

import logging
import math
import statistics
from dataclasses import dataclass, field

import numpy as np

from .citest import TieredDataset
from .errors import CopcError, InputError, NumericalError
from .graph import PDAG, EdgeKinds, count_edge_kinds
from .ida import estimate_effects, rank_covariates
from .pc import LearnConfig, run

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StabilityConfig:
    n_runs: int = 300
    subsample_size: int = 30
    q: int | None = None
    alpha: float = 0.02
    variant: str = "copc-stable"
    pcer_threshold: float = 0.005
    master_seed: int = 0
    max_retries: int = 5
    max_failed_fraction: float = 0.1

    def __post_init__(self) -> None:
        if self.n_runs < 1:
            raise InputError("n_runs must be at least 1")
        if self.subsample_size < 1:
            raise InputError("subsample_size must be positive")
        LearnConfig(alpha=self.alpha, variant=self.variant)

    def resolved_q(self, p: int) -> int:
        q = math.ceil(p / 10) if self.q is None else self.q
        if not 1 <= q <= p:
            raise InputError(f"q must lie in [1, {p}], got {q}")
        return q


def pcer(pi: float, q: int, p: int) -> float:
    """Error bound ``(q/p)**2 / (2*pi - 1)``; infinite when ``pi <= 0.5``."""
    if not 0 <= pi <= 1:
        raise ValueError(f"selection frequency must lie in [0, 1], got {pi}")
    if not 1 <= q <= p:
        raise ValueError(f"need 1 <= q <= p, got q={q}, p={p}")
    if pi <= 0.5:
        return math.inf
    return (q * q) / (p * p) / (2 * pi - 1)


@dataclass
class RunOutcome:
    run: int
    attempt: int
    lower_bounds: np.ndarray
    ambiguity: np.ndarray
    top: np.ndarray
    ranks: np.ndarray
    kinds: EdgeKinds
    cpdag: PDAG | None = None


@dataclass
class StabilityReport:
    names: list[str]
    tiers: list[int]
    covariates: list[int]
    q: int
    pi: np.ndarray
    pcer: np.ndarray
    selected: np.ndarray
    median_effect: np.ndarray
    runs: list[RunOutcome]
    failed_runs: list[int] = field(default_factory=list)
    config: StabilityConfig = field(default_factory=StabilityConfig)

    @property
    def p(self) -> int:
        return len(self.covariates)

    def order(self) -> list[int]:
        """Row order for reports: descending frequency, then name."""
        return sorted(range(self.p), key=lambda k: (-self.pi[k], self.names[k]))

    def ambiguity_distribution(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for r in self.runs:
            for a in r.ambiguity:
                counts[int(a)] = counts.get(int(a), 0) + 1
        return dict(sorted(counts.items()))


def _one_run(data: TieredDataset, cfg: StabilityConfig, k: int, q: int, keep_graph: bool) -> RunOutcome | None:
    learn = LearnConfig(alpha=cfg.alpha, variant=cfg.variant)
    for attempt in range(cfg.max_retries + 1):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.master_seed, k, attempt]))
        idx = np.sort(rng.choice(data.n, size=cfg.subsample_size, replace=False))
        sub = data.rows(idx)
        bad = sub.degenerate_columns()
        if bad:
            log.info("run %d attempt %d: degenerate column %s", k, attempt, bad[0])
            continue
        try:
            res = run(sub, learn)
            effects = estimate_effects(sub, res.cpdag)
        except CopcError as exc:
            log.info("run %d attempt %d failed: %s", k, attempt, exc)
            continue
        summaries = [s for _, s in effects]
        ranked = rank_covariates(summaries)
        pos = {s.covariate: r for r, s in enumerate(ranked)}
        covs = sub.covariates
        ranks = np.array([pos[x] for x in covs])
        return RunOutcome(
            run=k,
            attempt=attempt,
            lower_bounds=np.array([s.lower_bound for s in summaries]),
            ambiguity=np.array([s.ambiguity for s in summaries]),
            top=ranks < q,
            ranks=ranks,
            kinds=count_edge_kinds(res.cpdag),
            cpdag=res.cpdag if keep_graph else None,
        )
    return None


def cstar(
    data: TieredDataset,
    config: StabilityConfig,
    *,
    n_jobs: int = 1,
    keep_graphs: bool = False,
) -> StabilityReport:
    """Selection frequencies of covariates among the top ``q`` lower bounds over subsamples.

    Run ``k`` draws its subsample from a seed derived from ``(master_seed, k,
    attempt)``; a run whose subsample is degenerate or whose fit fails is
    retried up to ``max_retries`` times and then counted as failed.
    """
    if data.outcome is None:
        raise InputError("stability selection needs an outcome column")
    if config.subsample_size > data.n:
        raise InputError(f"subsample size {config.subsample_size} exceeds {data.n} rows")
    covs = data.covariates
    q = config.resolved_q(len(covs))

    if n_jobs == 1:
        outcomes = [_one_run(data, config, k, q, keep_graphs) for k in range(config.n_runs)]
    else:
        from joblib import Parallel, delayed

        outcomes = Parallel(n_jobs=n_jobs)(
            delayed(_one_run)(data, config, k, q, keep_graphs) for k in range(config.n_runs)
        )
    runs = [o for o in outcomes if o is not None]
    failed = [k for k, o in enumerate(outcomes) if o is None]
    if len(failed) > config.max_failed_fraction * config.n_runs:
        raise NumericalError(f"{len(failed)} of {config.n_runs} subsample runs failed")
    if not runs:
        raise NumericalError("no subsample run succeeded")

    top = np.array([r.top for r in runs], dtype=float)
    pi = top.mean(axis=0)
    p = len(covs)
    bounds = np.array([pcer(float(v), q, p) for v in pi])
    lbs = np.array([r.lower_bounds for r in runs])
    med = np.array([statistics.median(lbs[:, k]) for k in range(p)])
    return StabilityReport(
        names=[data.names[x] for x in covs],
        tiers=[data.tiers[x] for x in covs],
        covariates=list(covs),
        q=q,
        pi=pi,
        pcer=bounds,
        selected=bounds <= config.pcer_threshold,
        median_effect=med,
        runs=runs,
        failed_runs=failed,
        config=config,
    )


def select(report: StabilityReport, threshold: float | None = None) -> list[str]:
    """Covariates whose bound is at most ``threshold``, lowest bound first."""
    t = report.config.pcer_threshold if threshold is None else threshold
    keep = [k for k in range(report.p) if report.pcer[k] <= t]
    keep.sort(key=lambda k: (report.pcer[k], -report.median_effect[k], report.names[k]))
    return [report.names[k] for k in keep]
