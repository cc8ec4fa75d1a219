"""Mixed graphs over tiered vertices and the structural algorithms on them.

A :class:`PDAG` stores at most one :class:`EdgeMark` per unordered vertex
pair, keyed by ``(a, b)`` with ``a < b``.  Graph values are immutable; the
algorithms below copy into a private mutable working form, operate on it and
freeze the result.
"""

from __future__ import annotations

import enum
import itertools
import logging
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

from .errors import GraphError

log = logging.getLogger(__name__)

Pair = tuple[int, int]
Triple = tuple[int, int, int]


@dataclass(frozen=True)
class Vertex:
    id: int
    name: str
    tier: int = 0
    is_outcome: bool = False


class EdgeMark(enum.Enum):
    UNDIRECTED = "--"
    DIRECTED_AB = "->"
    DIRECTED_BA = "<-"


def make_vertices(
    names: Sequence[str],
    tiers: Sequence[int] | None = None,
    outcome: int | None = None,
) -> tuple[Vertex, ...]:
    """Build a vertex tuple with dense ids in the order given."""
    if tiers is None:
        tiers = [0] * len(names)
    if len(tiers) != len(names):
        raise GraphError("names and tiers differ in length")
    return tuple(
        Vertex(i, str(name), int(tier), i == outcome)
        for i, (name, tier) in enumerate(zip(names, tiers))
    )


def _validate_vertices(vertices: Sequence[Vertex]) -> None:
    for i, v in enumerate(vertices):
        if v.id != i:
            raise GraphError(f"vertex ids must be contiguous from 0; got {v.id} at {i}")
        if v.tier < 0:
            raise GraphError(f"vertex {v.name!r} has negative tier {v.tier}")
    if len({v.name for v in vertices}) != len(vertices):
        raise GraphError("vertex names must be unique")
    outcomes = [v for v in vertices if v.is_outcome]
    if len(outcomes) > 1:
        raise GraphError("at most one outcome vertex is allowed")
    if outcomes:
        y = outcomes[0]
        for v in vertices:
            if not v.is_outcome and v.tier >= y.tier:
                raise GraphError(
                    f"outcome {y.name!r} (tier {y.tier}) must lie strictly after "
                    f"covariate {v.name!r} (tier {v.tier})"
                )


def _normalize(u: int, v: int, mark: EdgeMark) -> tuple[Pair, EdgeMark]:
    if u < v:
        return (u, v), mark
    if mark is EdgeMark.DIRECTED_AB:
        mark = EdgeMark.DIRECTED_BA
    elif mark is EdgeMark.DIRECTED_BA:
        mark = EdgeMark.DIRECTED_AB
    return (v, u), mark


class PDAG:
    """Partially directed graph; DAGs and CPDAGs are PDAG values too."""

    __slots__ = ("vertices", "_edges", "_pa", "_ch", "_und")

    def __init__(
        self,
        vertices: Sequence[Vertex] | int,
        edges: Mapping[Pair, EdgeMark] | None = None,
    ) -> None:
        if isinstance(vertices, int):
            vertices = make_vertices([f"X{i}" for i in range(vertices)])
        vertices = tuple(vertices)
        _validate_vertices(vertices)
        n = len(vertices)
        norm: dict[Pair, EdgeMark] = {}
        pa = [set() for _ in range(n)]
        ch = [set() for _ in range(n)]
        und = [set() for _ in range(n)]
        for (u, v), mark in (edges or {}).items():
            if u == v:
                raise GraphError(f"self-loop on vertex {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise GraphError(f"edge ({u}, {v}) outside vertex range")
            key, mark = _normalize(u, v, EdgeMark(mark))
            if key in norm:
                raise GraphError(f"pair {key} given twice")
            norm[key] = mark
            a, b = key
            if mark is EdgeMark.UNDIRECTED:
                und[a].add(b)
                und[b].add(a)
            elif mark is EdgeMark.DIRECTED_AB:
                ch[a].add(b)
                pa[b].add(a)
            else:
                ch[b].add(a)
                pa[a].add(b)
        self.vertices = vertices
        self._edges = dict(sorted(norm.items()))
        self._pa = tuple(frozenset(s) for s in pa)
        self._ch = tuple(frozenset(s) for s in ch)
        self._und = tuple(frozenset(s) for s in und)

    @classmethod
    def from_edges(
        cls,
        vertices: Sequence[Vertex] | int,
        directed: Iterable[Pair] = (),
        undirected: Iterable[Pair] = (),
    ) -> "PDAG":
        edges: dict[Pair, EdgeMark] = {}
        for u, v in directed:
            key, mark = _normalize(u, v, EdgeMark.DIRECTED_AB)
            if key in edges:
                raise GraphError(f"pair {key} given twice")
            edges[key] = mark
        for u, v in undirected:
            key, mark = _normalize(u, v, EdgeMark.UNDIRECTED)
            if key in edges:
                raise GraphError(f"pair {key} given twice")
            edges[key] = mark
        return cls(vertices, edges)

    # -- queries -----------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.vertices)

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.vertices]

    @property
    def tiers(self) -> list[int]:
        return [v.tier for v in self.vertices]

    @property
    def outcome(self) -> int | None:
        for v in self.vertices:
            if v.is_outcome:
                return v.id
        return None

    @property
    def edges(self) -> Mapping[Pair, EdgeMark]:
        return MappingProxyType(self._edges)

    def mark(self, u: int, v: int) -> EdgeMark | None:
        """Mark of the pair read in the ``u, v`` direction, or None."""
        key = (u, v) if u < v else (v, u)
        m = self._edges.get(key)
        if m is None or u < v:
            return m
        return _normalize(u, v, m)[1]

    def adjacent(self, u: int, v: int) -> bool:
        return ((u, v) if u < v else (v, u)) in self._edges

    def has_directed(self, u: int, v: int) -> bool:
        return v in self._ch[u]

    def has_undirected(self, u: int, v: int) -> bool:
        return v in self._und[u]

    def parents(self, v: int) -> frozenset[int]:
        return self._pa[v]

    def children(self, v: int) -> frozenset[int]:
        return self._ch[v]

    def neighbors(self, v: int) -> frozenset[int]:
        """Undirected neighbours."""
        return self._und[v]

    def adjacents(self, v: int) -> frozenset[int]:
        return self._pa[v] | self._ch[v] | self._und[v]

    def directed_edges(self) -> list[Pair]:
        out = []
        for (a, b), m in self._edges.items():
            if m is EdgeMark.DIRECTED_AB:
                out.append((a, b))
            elif m is EdgeMark.DIRECTED_BA:
                out.append((b, a))
        return sorted(out)

    def undirected_edges(self) -> list[Pair]:
        return [k for k, m in self._edges.items() if m is EdgeMark.UNDIRECTED]

    @property
    def is_directed(self) -> bool:
        return not any(m is EdgeMark.UNDIRECTED for m in self._edges.values())

    def with_vertices(self, vertices: Sequence[Vertex]) -> "PDAG":
        if len(vertices) != self.n:
            raise GraphError("vertex count mismatch")
        return PDAG(vertices, self._edges)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PDAG):
            return NotImplemented
        return self.vertices == other.vertices and self._edges == other._edges

    def __hash__(self) -> int:
        return hash((self.vertices, tuple(self._edges.items())))

    def __len__(self) -> int:
        return len(self._edges)

    def __repr__(self) -> str:
        names = self.names
        parts = [f"{names[a]}{m.value}{names[b]}" for (a, b), m in self._edges.items()]
        return f"PDAG({', '.join(parts)})"


class _Work:
    """Mutable adjacency form used inside algorithms."""

    def __init__(self, g: PDAG) -> None:
        self.n = g.n
        self.pa = [set(g.parents(v)) for v in range(g.n)]
        self.ch = [set(g.children(v)) for v in range(g.n)]
        self.und = [set(g.neighbors(v)) for v in range(g.n)]

    def adjacent(self, u: int, v: int) -> bool:
        return v in self.und[u] or v in self.ch[u] or v in self.pa[u]

    def orient(self, u: int, v: int) -> None:
        self.und[u].discard(v)
        self.und[v].discard(u)
        self.ch[u].add(v)
        self.pa[v].add(u)

    def unorient(self, u: int, v: int) -> None:
        self.ch[u].discard(v)
        self.pa[v].discard(u)
        self.und[u].add(v)
        self.und[v].add(u)

    def reaches(self, src: int, dst: int) -> bool:
        """True if a directed path src -> ... -> dst exists."""
        if src == dst:
            return True
        seen = {src}
        stack = [src]
        while stack:
            for w in self.ch[stack.pop()]:
                if w == dst:
                    return True
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return False

    def freeze(self, vertices: Sequence[Vertex]) -> PDAG:
        edges: dict[Pair, EdgeMark] = {}
        for u in range(self.n):
            for v in self.ch[u]:
                key, m = _normalize(u, v, EdgeMark.DIRECTED_AB)
                edges[key] = m
            for v in self.und[u]:
                if u < v:
                    edges[(u, v)] = EdgeMark.UNDIRECTED
        return PDAG(vertices, edges)


@dataclass
class Conflicts:
    """Orientation conflicts met while orienting; the existing mark always wins."""

    count: int = 0
    events: list[str] = field(default_factory=list)

    def record(self, message: str) -> None:
        self.count += 1
        self.events.append(message)
        log.info("orientation conflict: %s", message)


class SepsetTable(dict):
    """Separation sets keyed by unordered vertex pair."""

    def put(self, i: int, j: int, sepset: Iterable[int]) -> None:
        s = frozenset(sepset)
        if i in s or j in s:
            raise GraphError(f"sepset of ({i}, {j}) contains an endpoint")
        self[frozenset((i, j))] = s

    def lookup(self, i: int, j: int) -> frozenset[int]:
        try:
            return self[frozenset((i, j))]
        except KeyError:
            raise GraphError(f"no separation set recorded for pair ({i}, {j})") from None

    def has(self, i: int, j: int) -> bool:
        return frozenset((i, j)) in self


# -- basic structure ---------------------------------------------------------


def skeleton(g: PDAG) -> PDAG:
    return PDAG(g.vertices, {k: EdgeMark.UNDIRECTED for k in g.edges})


def is_acyclic(g: PDAG) -> bool:
    """Kahn's algorithm on a fully directed graph."""
    if not g.is_directed:
        raise GraphError("is_acyclic needs a fully directed graph")
    return _directed_part_acyclic(g)


def _directed_part_acyclic(g: PDAG) -> bool:
    indeg = [len(g.parents(v)) for v in range(g.n)]
    queue = deque(v for v in range(g.n) if indeg[v] == 0)
    seen = 0
    while queue:
        u = queue.popleft()
        seen += 1
        for w in g.children(u):
            indeg[w] -= 1
            if indeg[w] == 0:
                queue.append(w)
    return seen == g.n


def topological_order(g: PDAG) -> list[int]:
    """Directed-part topological order, smallest id first among ties."""
    import heapq

    indeg = [len(g.parents(v)) for v in range(g.n)]
    heap = [v for v in range(g.n) if indeg[v] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        u = heapq.heappop(heap)
        order.append(u)
        for w in g.children(u):
            indeg[w] -= 1
            if indeg[w] == 0:
                heapq.heappush(heap, w)
    if len(order) != g.n:
        raise GraphError("directed part has a cycle")
    return order


def ancestors(g: PDAG, nodes: Iterable[int]) -> set[int]:
    """Nodes with a directed path into ``nodes``, the nodes included."""
    out = set(nodes)
    stack = list(out)
    while stack:
        for p in g.parents(stack.pop()):
            if p not in out:
                out.add(p)
                stack.append(p)
    return out


def descendants(g: PDAG, v: int) -> set[int]:
    out = {v}
    stack = [v]
    while stack:
        for c in g.children(stack.pop()):
            if c not in out:
                out.add(c)
                stack.append(c)
    return out


def d_separated(g: PDAG, x: int, y: int, given: Iterable[int] = ()) -> bool:
    """d-separation via the moralized ancestral graph."""
    s = set(given)
    if x == y:
        raise GraphError("x and y must differ")
    if x in s or y in s:
        raise GraphError("x and y must not be in the conditioning set")
    if not g.is_directed:
        raise GraphError("d-separation needs a DAG")
    anc = ancestors(g, {x, y} | s)
    adj: dict[int, set[int]] = {v: set() for v in anc}
    for v in anc:
        pas = list(g.parents(v))
        for p in pas:
            adj[v].add(p)
            adj[p].add(v)
        for p, q in itertools.combinations(pas, 2):
            adj[p].add(q)
            adj[q].add(p)
    seen = {x}
    stack = [x]
    while stack:
        for w in adj[stack.pop()]:
            if w == y:
                return False
            if w not in seen and w not in s:
                seen.add(w)
                stack.append(w)
    return True


def v_structures(g: PDAG) -> set[Triple]:
    """Directed unshielded colliders ``i -> j <- k`` reported with ``i < k``."""
    out = set()
    for j in range(g.n):
        for i, k in itertools.combinations(sorted(g.parents(j)), 2):
            if not g.adjacent(i, k):
                out.add((i, j, k))
    return out


def find_v_structures(
    skel: PDAG,
    sepsets: Mapping,
    *,
    allowed=None,
) -> list[Triple]:
    """Unshielded triples ``i - j - k`` whose middle vertex is outside sepset(i, k).

    ``allowed(i, j, k)`` optionally filters candidate triples.
    """
    out = []
    for j in range(skel.n):
        for i, k in itertools.combinations(sorted(skel.adjacents(j)), 2):
            if skel.adjacent(i, k):
                continue
            key = frozenset((i, k))
            if key not in sepsets:
                raise GraphError(f"missing separation set for non-adjacent pair ({i}, {k})")
            if j in sepsets[key]:
                continue
            if allowed is not None and not allowed(i, j, k):
                continue
            out.append((i, j, k))
    return sorted(out)


def orient_v_structures(
    g: PDAG, triples: Iterable[Triple], conflicts: Conflicts | None = None
) -> PDAG:
    """Orient ``i -> j <- k`` for every triple.

    Existing directed marks are never flipped, and an orientation that would
    close a directed cycle is skipped; both cases count as conflicts.
    """
    conflicts = conflicts if conflicts is not None else Conflicts()
    w = _Work(g)
    names = g.names
    for i, j, k in triples:
        for a in (i, k):
            if j in w.ch[a]:
                continue
            if a in w.ch[j]:
                conflicts.record(
                    f"v-structure {names[i]}->{names[j]}<-{names[k]} would reverse "
                    f"{names[j]}->{names[a]}"
                )
                continue
            if w.reaches(j, a):
                conflicts.record(
                    f"v-structure {names[i]}->{names[j]}<-{names[k]}: "
                    f"{names[a]}->{names[j]} closes a cycle"
                )
                continue
            w.orient(a, j)
    return w.freeze(g.vertices)


# -- Meek rules -------------------------------------------------------------


def _meek_rule(w: _Work, u: int, v: int, rule4: bool) -> int:
    """Number of the first rule that orients ``u - v`` as ``u -> v``, or 0."""
    for k in w.pa[u]:
        if k != v and not w.adjacent(k, v):
            return 1
    if w.ch[u] & w.pa[v]:
        return 2
    cands = sorted(w.und[u] & w.pa[v])
    for k, l in itertools.combinations(cands, 2):
        if not w.adjacent(k, l):
            return 3
    if rule4:
        for l in w.pa[v]:
            if l == u or not w.adjacent(u, l):
                continue
            for k in w.pa[l]:
                if k != u and k != v and not w.adjacent(k, v) and w.adjacent(u, k):
                    return 4
    return 0


def apply_meek_rules(
    g: PDAG, *, rule4: bool = True, conflicts: Conflicts | None = None
) -> PDAG:
    """Close ``g`` under Meek's orientation rules.

    Only undirected edges are ever oriented.  An orientation that would close
    a directed cycle is recorded as a conflict and the edge stays undirected.
    """
    if not _directed_part_acyclic(g):
        raise GraphError("directed part of the input has a cycle")
    conflicts = conflicts if conflicts is not None else Conflicts()
    w = _Work(g)
    names = g.names
    blocked: set[Pair] = set()
    changed = True
    while changed:
        changed = False
        pending = sorted((a, b) for a in range(w.n) for b in w.und[a] if a < b)
        for a, b in pending:
            if b not in w.und[a]:
                continue
            for u, v in ((a, b), (b, a)):
                rule = _meek_rule(w, u, v, rule4)
                if not rule:
                    continue
                if w.reaches(v, u):
                    if (u, v) not in blocked:
                        blocked.add((u, v))
                        conflicts.record(
                            f"rule {rule} orientation {names[u]}->{names[v]} closes a cycle"
                        )
                    continue
                w.orient(u, v)
                changed = True
                break
    return w.freeze(g.vertices)


def cpdag_of(dag: PDAG) -> PDAG:
    """CPDAG of a DAG: skeleton, the DAG's v-structures, Meek closure."""
    if not is_acyclic(dag):
        raise GraphError("input is not acyclic")
    g = orient_v_structures(skeleton(dag), sorted(v_structures(dag)))
    return apply_meek_rules(g, rule4=False)


def orient_by_tiers(g: PDAG) -> PDAG:
    """Direct every cross-tier edge from the earlier to the later tier."""
    tiers = g.tiers
    edges = {}
    for (a, b), m in g.edges.items():
        if tiers[a] < tiers[b]:
            m = EdgeMark.DIRECTED_AB
        elif tiers[a] > tiers[b]:
            m = EdgeMark.DIRECTED_BA
        edges[(a, b)] = m
    return PDAG(g.vertices, edges)


def tiered_cpdag_of(dag: PDAG, *, rule4: bool = True) -> PDAG:
    """CPDAG of ``dag`` refined by the tier ordering as background knowledge."""
    return apply_meek_rules(orient_by_tiers(cpdag_of(dag)), rule4=rule4)


# -- comparison -------------------------------------------------------------


def _check_same_vertices(g1: PDAG, g2: PDAG) -> None:
    if g1.n != g2.n or g1.names != g2.names:
        raise GraphError("graphs are defined over different vertex sets")


def shd(g1: PDAG, g2: PDAG, mode: str = "full") -> int:
    """Structural Hamming distance.

    Every vertex pair whose status differs costs 1: an extra or missing
    adjacency, or (in ``"full"`` mode) a different mark on a shared one.
    ``"adjacency-only"`` ignores marks.
    """
    _check_same_vertices(g1, g2)
    if mode not in ("full", "adjacency-only"):
        raise ValueError(f"unknown shd mode {mode!r}")
    e1, e2 = g1.edges, g2.edges
    d = 0
    for key in set(e1) | set(e2):
        m1, m2 = e1.get(key), e2.get(key)
        if m1 is None or m2 is None:
            d += 1
        elif mode == "full" and m1 is not m2:
            d += 1
    return d


# -- Markov equivalence -----------------------------------------------------


def enumerate_dag_extensions(c: PDAG, max_undirected: int = 20) -> list[PDAG]:
    """All DAGs with the skeleton and v-structures of ``c``."""
    und = c.undirected_edges()
    if len(und) > max_undirected:
        raise GraphError(
            f"{len(und)} undirected edges exceed the enumeration guard of {max_undirected}"
        )
    if not _directed_part_acyclic(c):
        raise GraphError("directed part of the CPDAG has a cycle")
    w = _Work(c)
    found: list[PDAG] = []

    def extend(idx: int) -> None:
        if idx == len(und):
            found.append(w.freeze(c.vertices))
            return
        a, b = und[idx]
        for u, v in ((a, b), (b, a)):
            if w.reaches(v, u):
                continue
            if any(p != u and not w.adjacent(p, u) for p in w.pa[v]):
                continue
            w.orient(u, v)
            extend(idx + 1)
            w.unorient(u, v)

    extend(0)
    if not found:
        raise GraphError("CPDAG admits no consistent DAG extension")
    return found


# -- aggregation and reporting ----------------------------------------------


@dataclass(frozen=True)
class SummaryEdge:
    a: int
    b: int
    mark: EdgeMark
    count: int
    count_ab: int
    count_ba: int
    count_undirected: int
    frequency: Fraction


@dataclass(frozen=True)
class SummaryGraph:
    vertices: tuple[Vertex, ...]
    n_graphs: int
    threshold: float
    edges: tuple[SummaryEdge, ...]


def aggregate_cpdags(graphs: Sequence[PDAG], threshold: float = 0.2) -> SummaryGraph:
    """Per-pair edge frequencies across graphs, keeping pairs at or above threshold.

    A pair seen with more than one mark is reported undirected with the
    summed frequency.
    """
    if not graphs:
        raise GraphError("cannot aggregate an empty list of graphs")
    if not 0 < threshold <= 1:
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    first = graphs[0]
    for g in graphs[1:]:
        _check_same_vertices(first, g)
    counts: dict[Pair, list[int]] = {}
    slot = {EdgeMark.DIRECTED_AB: 0, EdgeMark.DIRECTED_BA: 1, EdgeMark.UNDIRECTED: 2}
    for g in graphs:
        for key, m in g.edges.items():
            counts.setdefault(key, [0, 0, 0])[slot[m]] += 1
    cut = Fraction(threshold).limit_denominator(10**9)
    total = len(graphs)
    kept = []
    for (a, b), (ab, ba, ud) in sorted(counts.items()):
        freq = Fraction(ab + ba + ud, total)
        if freq < cut:
            continue
        kinds = [m for m, c in zip((EdgeMark.DIRECTED_AB, EdgeMark.DIRECTED_BA, EdgeMark.UNDIRECTED), (ab, ba, ud)) if c]
        mark = kinds[0] if len(kinds) == 1 else EdgeMark.UNDIRECTED
        kept.append(SummaryEdge(a, b, mark, ab + ba + ud, ab, ba, ud, freq))
    return SummaryGraph(first.vertices, total, threshold, tuple(kept))


@dataclass(frozen=True)
class EdgeKinds:
    directed: int
    undirected: int
    non_chronological: int

    @property
    def total(self) -> int:
        return self.directed + self.undirected


def count_edge_kinds(g: PDAG, tiers: Sequence[int] | None = None) -> EdgeKinds:
    """Directed, undirected and non-chronological edge counts.

    Non-chronological edges point from a later tier to a strictly earlier one,
    or are undirected across tiers (such an edge admits the wrong direction).
    """
    tiers = list(g.tiers if tiers is None else tiers)
    directed = undirected = bad = 0
    for (a, b), m in g.edges.items():
        if m is EdgeMark.UNDIRECTED:
            undirected += 1
            bad += tiers[a] != tiers[b]
        else:
            directed += 1
            u, v = (a, b) if m is EdgeMark.DIRECTED_AB else (b, a)
            bad += tiers[u] > tiers[v]
    return EdgeKinds(directed, undirected, bad)


@dataclass(frozen=True)
class WeightedDAG:
    """A DAG with a real coefficient on every edge."""

    dag: PDAG
    weights: Mapping[Pair, float]

    def __post_init__(self) -> None:
        if not is_acyclic(self.dag):
            raise GraphError("weighted DAG has a cycle")
        edges = set(self.dag.directed_edges())
        if set(self.weights) != edges:
            raise GraphError("weights must cover exactly the directed edges")

    def weight(self, u: int, v: int) -> float:
        return float(self.weights.get((u, v), 0.0))
