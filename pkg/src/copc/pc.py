"""PC, PC-stable and their chronologically ordered (COPC) variants."""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .citest import CITestResult, FisherZ, TieredDataset
from .errors import InputError
from .graph import (
    PDAG,
    Conflicts,
    EdgeMark,
    SepsetTable,
    Vertex,
    apply_meek_rules,
    find_v_structures,
    make_vertices,
    orient_by_tiers,
    orient_v_structures,
)

VARIANTS = ("pc", "pc-stable", "copc", "copc-stable")

CITest = Callable[[int, int, Sequence[int]], CITestResult]


@dataclass(frozen=True)
class LearnConfig:
    alpha: float = 0.02
    variant: str = "copc-stable"
    max_level: int | None = None
    order: tuple[int, ...] | None = None
    rule4: bool = True
    vstruct_within_tier_only: bool = False

    def __post_init__(self) -> None:
        if not 0 < self.alpha < 1:
            raise InputError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.variant not in VARIANTS:
            raise InputError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.max_level is not None and self.max_level < 0:
            raise InputError("max_level must be non-negative")

    @property
    def stable(self) -> bool:
        return self.variant.endswith("stable")

    @property
    def chrono(self) -> bool:
        return self.variant.startswith("copc")


@dataclass
class SkeletonResult:
    graph: PDAG
    sepsets: SepsetTable
    n_tests: int
    max_level: int

    def __iter__(self):
        return iter((self.graph, self.sepsets))


@dataclass
class LearnResult:
    cpdag: PDAG
    skeleton: PDAG
    sepsets: SepsetTable
    config: LearnConfig
    n_tests: int
    max_level: int
    conflicts: Conflicts = field(default_factory=Conflicts)
    singular_tests: int = 0
    wall_time: float = 0.0

    def record(self, *, timing: bool = False) -> dict:
        """Diagnostics for the JSON run record."""
        out = {
            "variant": self.config.variant,
            "alpha": self.config.alpha,
            "max_level_cap": self.config.max_level,
            "rule4": self.config.rule4,
            "vstruct_within_tier_only": self.config.vstruct_within_tier_only,
            "ci_tests": self.n_tests,
            "levels_reached": self.max_level,
            "conflicts": self.conflicts.count,
            "singular_tests": self.singular_tests,
            "edges": len(self.cpdag),
        }
        if timing:
            out["wall_time_s"] = round(self.wall_time, 6)
        return out


def _as_vertices(vertices, tiers=None) -> tuple[Vertex, ...]:
    vertices = list(vertices)
    if vertices and isinstance(vertices[0], Vertex):
        return tuple(vertices)
    return make_vertices(vertices, tiers if tiers is not None else [0] * len(vertices))


def initial_graph(vertices, variant: str, tiers: Sequence[int] | None = None) -> PDAG:
    """Complete starting graph; COPC variants pre-direct cross-tier pairs."""
    if variant not in VARIANTS:
        raise InputError(f"unknown variant {variant!r}")
    chrono = variant.startswith("copc")
    vlist = list(vertices)
    if chrono and tiers is None and not (vlist and isinstance(vlist[0], Vertex)):
        raise InputError("COPC variants need a tier for every vertex")
    vs = _as_vertices(vlist, tiers)
    g = PDAG(vs, {pair: EdgeMark.UNDIRECTED for pair in itertools.combinations(range(len(vs)), 2)})
    return orient_by_tiers(g) if chrono else g


def _skeleton(
    test: CITest,
    n: int,
    order: Sequence[int],
    stable: bool,
    max_level: int | None,
    allowed: Callable[[int, int, int], bool] | None,
    trace: list | None,
) -> tuple[list[set[int]], SepsetTable, int, int]:
    adj = [set(range(n)) - {i} for i in range(n)]
    pos = {v: k for k, v in enumerate(order)}
    sepsets = SepsetTable()
    n_tests = 0
    reached = 0
    level = 0
    while max_level is None or level <= max_level:
        frozen = [set(a) for a in adj] if stable else adj
        active = False
        for i in order:
            for j in sorted(frozen[i], key=pos.__getitem__):
                if j not in adj[i]:
                    continue
                cand = frozen[i] - {j}
                if allowed is not None:
                    cand = {k for k in cand if allowed(i, j, k)}
                if len(cand) < level:
                    continue
                active = True
                reached = level
                for s in itertools.combinations(sorted(cand, key=pos.__getitem__), level):
                    n_tests += 1
                    if trace is not None:
                        trace.append((i, j, s))
                    if test(i, j, s).independent:
                        adj[i].discard(j)
                        adj[j].discard(i)
                        sepsets.put(i, j, s)
                        break
        if not active:
            break
        level += 1
    return adj, sepsets, n_tests, reached


def _resolve(data, config: LearnConfig, test: CITest | None):
    if isinstance(data, TieredDataset):
        vertices = data.vertices()
        if test is None:
            test = FisherZ(data, config.alpha)
    else:
        vertices = _as_vertices(data)
        if test is None:
            raise InputError("a CI test is required when no dataset is given")
    n = len(vertices)
    order = tuple(range(n)) if config.order is None else tuple(config.order)
    if sorted(order) != list(range(n)):
        raise InputError("vertex order must be a permutation of the vertex ids")
    cap = config.max_level
    if isinstance(data, TieredDataset):
        # Fisher z needs n - |S| - 3 > 0
        room = data.n - 4
        if room < 0:
            raise InputError(f"{data.n} rows are too few for any CI test")
        cap = room if cap is None else min(cap, room)
    return vertices, test, order, cap


def _freeze(vertices, adj) -> PDAG:
    edges = {(a, b): EdgeMark.UNDIRECTED for a in range(len(adj)) for b in adj[a] if a < b}
    return PDAG(vertices, edges)


def learn_skeleton(
    data, config: LearnConfig, *, test: CITest | None = None, trace: list | None = None
) -> SkeletonResult:
    """Level-wise edge removal starting from the complete graph.

    ``data`` is a :class:`TieredDataset` or, together with ``test``, a vertex
    sequence.  The stable variants freeze adjacency sets at the start of each
    level, which makes the skeleton independent of the vertex order.
    """
    vertices, test, order, cap = _resolve(data, config, test)
    adj, sepsets, n_tests, reached = _skeleton(test, len(vertices), order, config.stable, cap, None, trace)
    return SkeletonResult(_freeze(vertices, adj), sepsets, n_tests, reached)


def learn_skeleton_chrono(
    data,
    config: LearnConfig,
    tiers: Sequence[int] | None = None,
    *,
    test: CITest | None = None,
    trace: list | None = None,
) -> SkeletonResult:
    """As :func:`learn_skeleton`, never conditioning on a vertex measured after both endpoints."""
    vertices, test, order, cap = _resolve(data, config, test)
    tiers = [v.tier for v in vertices] if tiers is None else list(tiers)
    if len(tiers) != len(vertices):
        raise InputError("one tier per vertex is required")

    def allowed(i: int, j: int, k: int) -> bool:
        return tiers[k] <= max(tiers[i], tiers[j])

    adj, sepsets, n_tests, reached = _skeleton(test, len(vertices), order, config.stable, cap, allowed, trace)
    return SkeletonResult(_freeze(vertices, adj), sepsets, n_tests, reached)


def orient_chronological(g: PDAG, tiers: Sequence[int] | None = None) -> PDAG:
    if tiers is not None:
        g = g.with_vertices([Vertex(v.id, v.name, int(t), v.is_outcome) for v, t in zip(g.vertices, tiers)])
    return orient_by_tiers(g)


def run(data, config: LearnConfig, *, test: CITest | None = None) -> LearnResult:
    """Skeleton, chronological orientation (COPC only), v-structures, Meek closure."""
    start = time.perf_counter()
    vertices, test, _, _ = _resolve(data, config, test)
    if config.chrono:
        sk = learn_skeleton_chrono(data, config, test=test)
    else:
        sk = learn_skeleton(data, config, test=test)
    conflicts = Conflicts()
    g = orient_chronological(sk.graph) if config.chrono else sk.graph
    allowed = None
    if config.chrono and config.vstruct_within_tier_only:
        tiers = [v.tier for v in vertices]

        def same_tier(i, j, k):
            return tiers[i] == tiers[j] == tiers[k]

        allowed = same_tier

    triples = find_v_structures(sk.graph, sk.sepsets, allowed=allowed)
    g = orient_v_structures(g, triples, conflicts)
    g = apply_meek_rules(g, rule4=config.rule4, conflicts=conflicts)
    return LearnResult(
        cpdag=g,
        skeleton=sk.graph,
        sepsets=sk.sepsets,
        config=config,
        n_tests=sk.n_tests,
        max_level=sk.max_level,
        conflicts=conflicts,
        singular_tests=getattr(test, "singular", 0),
        wall_time=time.perf_counter() - start,
    )
