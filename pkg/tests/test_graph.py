import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from copc.dot import pdag_to_dot, read_dot, summary_to_dot
from copc.errors import GraphError
from copc.graph import (
    PDAG,
    Conflicts,
    EdgeMark,
    SepsetTable,
    Vertex,
    WeightedDAG,
    aggregate_cpdags,
    apply_meek_rules,
    count_edge_kinds,
    cpdag_of,
    d_separated,
    enumerate_dag_extensions,
    find_v_structures,
    is_acyclic,
    make_vertices,
    orient_by_tiers,
    orient_v_structures,
    shd,
    skeleton,
    tiered_cpdag_of,
    topological_order,
    v_structures,
)

from conftest import random_dag, random_pdag

D, U = EdgeMark.DIRECTED_AB, EdgeMark.UNDIRECTED


def dag(n, *edges):
    return PDAG.from_edges(n, directed=edges)


# -- brute-force oracles --------------------------------------------------------


def all_dags(n):
    pairs = list(itertools.combinations(range(n), 2))
    for choice in itertools.product((None, 0, 1), repeat=len(pairs)):
        edges = [(a, b) if c == 0 else (b, a) for (a, b), c in zip(pairs, choice) if c is not None]
        g = dag(n, *edges)
        if is_acyclic(g):
            yield g


def simple_paths(g, x, y):
    out = []

    def walk(path):
        u = path[-1]
        if u == y:
            out.append(list(path))
            return
        for w in g.adjacents(u):
            if w not in path:
                path.append(w)
                walk(path)
                path.pop()

    walk([x])
    return out


def d_sep_by_paths(g, x, y, s):
    s = set(s)
    desc = {v: {v} | {w for w in range(g.n) if v in _anc_of(g, w)} for v in range(g.n)}
    for path in simple_paths(g, x, y):
        blocked = False
        for a, b, c in zip(path, path[1:], path[2:]):
            collider = g.has_directed(a, b) and g.has_directed(c, b)
            if collider and not (desc[b] & s):
                blocked = True
            if not collider and b in s:
                blocked = True
        if not blocked:
            return False
    return True


def _anc_of(g, v):
    out, stack = set(), [v]
    while stack:
        for p in g.parents(stack.pop()):
            if p not in out:
                out.add(p)
                stack.append(p)
    return out


def brute_class(d):
    """DAGs with the same skeleton and v-structures, found by trying every orientation."""
    pairs = sorted(d.edges)
    target = v_structures(d)
    out = []
    for bits in itertools.product((0, 1), repeat=len(pairs)):
        g = dag(d.vertices, *[(a, b) if t == 0 else (b, a) for (a, b), t in zip(pairs, bits)])
        if is_acyclic(g) and v_structures(g) == target:
            out.append(g)
    return out


def common_marks(n, members):
    edges = {}
    for key in members[0].edges:
        marks = {g.edges[key] for g in members}
        edges[key] = marks.pop() if len(marks) == 1 else U
    return PDAG(members[0].vertices, edges)


def naive_shd(g1, g2):
    def mat(g):
        a = np.zeros((g.n, g.n), dtype=int)
        for u, v in g.directed_edges():
            a[u, v] = 1
        for u, v in g.undirected_edges():
            a[u, v] = a[v, u] = 1
        return a

    a, b = mat(g1), mat(g2)
    return sum((a[i, j], a[j, i]) != (b[i, j], b[j, i]) for i in range(g1.n) for j in range(i + 1, g1.n))


# -- construction ---------------------------------------------------------------


def test_vertex_rules():
    with pytest.raises(GraphError):
        PDAG([Vertex(1, "a")])
    with pytest.raises(GraphError):
        PDAG([Vertex(0, "a"), Vertex(1, "a")])
    with pytest.raises(GraphError):
        PDAG(make_vertices(["a", "y"], [2, 2], outcome=1))
    with pytest.raises(GraphError):
        PDAG([Vertex(0, "a", 1, True), Vertex(1, "b", 2, True)])
    with pytest.raises(GraphError):
        PDAG(2, {(0, 0): D})
    with pytest.raises(GraphError):
        PDAG.from_edges(2, directed=[(0, 1)], undirected=[(1, 0)])
    g = PDAG(make_vertices(["a", "y"], [1, 2], outcome=1))
    assert g.outcome == 1


def test_edges_are_normalized():
    g = PDAG.from_edges(3, directed=[(2, 0)], undirected=[(2, 1)])
    assert dict(g.edges) == {(0, 2): EdgeMark.DIRECTED_BA, (1, 2): U}
    assert g.parents(0) == {2} and g.children(2) == {0}
    assert g.neighbors(1) == {2} and g.adjacents(2) == {0, 1}
    assert g.mark(0, 2) is EdgeMark.DIRECTED_BA and g.mark(2, 0) is D
    assert g.mark(0, 1) is None
    assert g == PDAG(3, {(0, 2): EdgeMark.DIRECTED_BA, (1, 2): U})


def test_skeleton_examples():
    g = PDAG.from_edges(3, directed=[(0, 1)], undirected=[(1, 2)])
    assert skeleton(g) == PDAG.from_edges(3, undirected=[(0, 1), (1, 2)])
    assert skeleton(PDAG(4)) == PDAG(4)
    assert skeleton(dag(3, (0, 1), (1, 2))) == PDAG.from_edges(3, undirected=[(0, 1), (1, 2)])


def test_is_acyclic():
    assert is_acyclic(dag(3, (0, 1), (1, 2)))
    assert not is_acyclic(dag(3, (0, 1), (1, 2), (2, 0)))
    with pytest.raises(GraphError):
        is_acyclic(PDAG.from_edges(2, undirected=[(0, 1)]))
    assert topological_order(dag(3, (2, 1), (1, 0))) == [2, 1, 0]


def test_weighted_dag():
    w = WeightedDAG(dag(3, (0, 1)), {(0, 1): 0.5})
    assert w.weight(0, 1) == 0.5 and w.weight(1, 2) == 0.0
    with pytest.raises(GraphError):
        WeightedDAG(dag(3, (0, 1)), {})


# -- d-separation ----------------------------------------------------------------


def test_d_separation_examples():
    chain = dag(3, (0, 1), (1, 2))
    assert d_separated(chain, 0, 2, {1})
    assert not d_separated(chain, 0, 2)
    coll = dag(3, (0, 1), (2, 1))
    assert d_separated(coll, 0, 2)
    assert not d_separated(coll, 0, 2, {1})
    # i -> j -> k -> m <- l: the collider at m closes the only path
    g = dag(5, (0, 1), (1, 2), (2, 3), (4, 3))
    assert d_separated(g, 0, 4)
    assert not d_separated(g, 0, 4, {3})
    with pytest.raises(GraphError):
        d_separated(chain, 0, 0)


def _check_all_queries(g):
    for x, y in itertools.combinations(range(g.n), 2):
        rest = [v for v in range(g.n) if v not in (x, y)]
        for r in range(len(rest) + 1):
            for s in itertools.combinations(rest, r):
                assert d_separated(g, x, y, s) == d_sep_by_paths(g, x, y, s), (g, x, y, s)


def test_d_separation_exhaustive_small():
    count = 0
    for n in (2, 3, 4):
        for g in all_dags(n):
            _check_all_queries(g)
            count += 1
    assert count == 3 + 25 + 543  # labelled DAGs on 2, 3 and 4 nodes


@pytest.mark.parametrize("n", [5, 6, 7])
def test_d_separation_random(n):
    rng = np.random.default_rng(n)
    for _ in range(40 if n < 7 else 25):
        _check_all_queries(random_dag(n, rng.uniform(0.2, 0.6), rng))


# -- v-structures and Meek rules -----------------------------------------------------------


def test_find_v_structures_examples():
    skel = PDAG.from_edges(3, undirected=[(0, 1), (1, 2)])
    seps = SepsetTable()
    seps.put(0, 2, ())
    assert find_v_structures(skel, seps) == [(0, 1, 2)]
    seps.put(0, 2, (1,))
    assert find_v_structures(skel, seps) == []
    with pytest.raises(GraphError):
        find_v_structures(skel, SepsetTable())


def test_meek_rules_examples():
    # rule 1: i -> j - k, i and k non-adjacent
    g = PDAG.from_edges(3, directed=[(0, 1)], undirected=[(1, 2)])
    assert apply_meek_rules(g).has_directed(1, 2)
    # rule 2: i - j with i -> k -> j
    g = PDAG.from_edges(3, directed=[(0, 2), (2, 1)], undirected=[(0, 1)])
    assert apply_meek_rules(g).has_directed(0, 1)
    # rule 3: i - l -> j, i - k -> j, k and l non-adjacent, i - j
    i, j, k, l = range(4)
    g = PDAG.from_edges(4, directed=[(l, j), (k, j)], undirected=[(i, l), (i, k), (i, j)])
    out = apply_meek_rules(g)
    assert out.has_directed(i, j)
    assert out.has_undirected(i, k) and out.has_undirected(i, l)


def test_meek_rule4():
    # a - b, a - c, a - d, b -> c, c -> d, b and d non-adjacent: a -> d by rule 4
    a, b, c, d_ = range(4)
    g = PDAG.from_edges(4, directed=[(b, c), (c, d_)], undirected=[(a, b), (a, c), (a, d_)])
    assert apply_meek_rules(g, rule4=True).has_directed(a, d_)
    assert apply_meek_rules(g, rule4=False).has_undirected(a, d_)


def test_v_structure_conflicts_keep_existing_marks():
    g = PDAG.from_edges(3, directed=[(1, 0)], undirected=[(1, 2)])
    c = Conflicts()
    out = orient_v_structures(g, [(0, 1, 2)], c)
    assert out.has_directed(1, 0) and out.has_directed(2, 1)
    assert c.count == 1 and c.events


def test_meek_never_reverses_and_is_idempotent(rng):
    for _ in range(200):
        n = int(rng.integers(3, 8))
        d = random_dag(n, 0.5, rng)
        und = PDAG(n, {k: U for k in d.edges})
        picks = {k: m for k, m in d.edges.items() if rng.random() < 0.3}
        g = PDAG(n, {**dict(und.edges), **picks})
        out = apply_meek_rules(g)
        for k, m in picks.items():
            assert out.edges[k] is m
        assert apply_meek_rules(out) == out
        assert skeleton(out) == skeleton(g)


# -- CPDAGs and equivalence classes ---------------------------------------------------


@pytest.mark.parametrize("n", [3, 4, 5, 6])
def test_cpdag_matches_brute_force_class(n):
    rng = np.random.default_rng(100 + n)
    for _ in range(60):
        d = random_dag(n, rng.uniform(0.2, 0.8), rng)
        members = brute_class(d)
        c = cpdag_of(d)
        assert c == common_marks(n, members)
        ext = enumerate_dag_extensions(c)
        assert set(ext) == set(members)
        for e in ext:
            assert skeleton(e) == skeleton(c)
            assert v_structures(e) == v_structures(d)


@pytest.mark.parametrize("n", [4, 5, 6])
def test_tiered_cpdag_matches_brute_force(n):
    rng = np.random.default_rng(200 + n)
    for _ in range(60):
        tiers = sorted(rng.integers(0, 3, n).tolist())
        d = random_dag(n, rng.uniform(0.3, 0.8), rng, tiers=tiers)
        members = [g for g in brute_class(d) if count_edge_kinds(g, tiers).non_chronological == 0]
        assert d in members
        assert tiered_cpdag_of(d) == common_marks(n, members)


def test_enumeration_examples():
    assert set(enumerate_dag_extensions(PDAG.from_edges(2, undirected=[(0, 1)]))) == {dag(2, (0, 1)), dag(2, (1, 0))}
    v = dag(3, (0, 2), (1, 2))
    assert enumerate_dag_extensions(v) == [v]
    chain = PDAG.from_edges(3, undirected=[(0, 1), (1, 2)])
    assert len(enumerate_dag_extensions(chain)) == 3
    big = PDAG.from_edges(22, undirected=[(k, k + 1) for k in range(21)])
    with pytest.raises(GraphError):
        enumerate_dag_extensions(big)
    with pytest.raises(GraphError):
        # every orientation of a chordless 4-cycle creates a collider
        enumerate_dag_extensions(PDAG.from_edges(4, undirected=[(0, 1), (1, 2), (2, 3), (3, 0)]))


# -- SHD ---------------------------------------------------------------------------------


def test_shd_examples():
    g = dag(3, (0, 1))
    assert shd(g, g) == 0
    assert shd(g, dag(3, (0, 1), (1, 2))) == 1
    assert shd(g, PDAG.from_edges(3, undirected=[(0, 1)])) == 1
    assert shd(g, dag(3, (1, 0)), mode="adjacency-only") == 0
    with pytest.raises(GraphError):
        shd(PDAG(2), PDAG(3))


@st.composite
def graph_triples(draw):
    n = draw(st.integers(1, 8))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    return tuple(random_pdag(n, rng) for _ in range(3))


@given(graph_triples())
@settings(max_examples=300, deadline=None)
def test_shd_is_a_metric(gs):
    a, b, c = gs
    for mode in ("full", "adjacency-only"):
        assert shd(a, a, mode) == 0
        assert shd(a, b, mode) == shd(b, a, mode) >= 0
        assert shd(a, c, mode) <= shd(a, b, mode) + shd(b, c, mode)
    assert (shd(a, b) == 0) == (a == b)
    assert shd(a, b) == naive_shd(a, b)


# -- aggregation, edge kinds, DOT ----------------------------------------------------------


def test_aggregate_threshold_boundary():
    with_edge = dag(3, (0, 1))
    without = PDAG(3)
    graphs = [with_edge] * 59 + [without] * 241
    assert aggregate_cpdags(graphs, 0.2).edges == ()
    graphs = [with_edge] * 60 + [without] * 240
    (e,) = aggregate_cpdags(graphs, 0.2).edges
    assert e.frequency == Fraction(1, 5)
    same = aggregate_cpdags([with_edge] * 300, 0.2)
    assert [float(x.frequency) for x in same.edges] == [1.0]
    with pytest.raises(GraphError):
        aggregate_cpdags([], 0.2)


def test_aggregate_mixed_orientations():
    graphs = [
        dag(3, (0, 1), (1, 2)),
        dag(3, (1, 0), (1, 2)),
        PDAG.from_edges(3, undirected=[(0, 1)]),
        dag(3, (0, 1)),
        PDAG(3),
    ]
    s = aggregate_cpdags(graphs, 0.2)
    by_pair = {(e.a, e.b): e for e in s.edges}
    e01 = by_pair[(0, 1)]
    assert e01.mark is U and e01.count == 4 and e01.frequency == Fraction(4, 5)
    assert (e01.count_ab, e01.count_ba, e01.count_undirected) == (2, 1, 1)
    e12 = by_pair[(1, 2)]
    assert e12.mark is D and e12.frequency == Fraction(2, 5)


def test_count_edge_kinds():
    vs = make_vertices(["a1", "b1", "a2", "b2"], [1, 1, 2, 2])
    g = PDAG(vs, {(0, 1): U, (0, 2): D, (1, 3): U, (2, 3): D, (0, 3): EdgeMark.DIRECTED_BA})
    k = count_edge_kinds(g)
    assert (k.directed, k.undirected, k.non_chronological, k.total) == (3, 2, 2, 5)
    assert count_edge_kinds(orient_by_tiers(g)).non_chronological == 0


@pytest.mark.parametrize("style", ["plain", "graphviz"])
def test_dot_round_trip(style, rng):
    for _ in range(30):
        g = random_pdag(6, rng)
        vs = [Vertex(v.id, f'n "{v.id}"', v.id // 2) for v in g.vertices]
        g = g.with_vertices(vs)
        text = pdag_to_dot(g, style=style)
        assert read_dot(text) == g
        assert text == pdag_to_dot(read_dot(text), style=style)


def test_dot_notation():
    g = PDAG.from_edges(3, directed=[(1, 0)], undirected=[(1, 2)])
    plain = pdag_to_dot(g)
    assert '"X1" -> "X0";' in plain and '"X1" -- "X2";' in plain
    gv = pdag_to_dot(g, style="graphviz")
    assert '"X1" -> "X2" [dir=none];' in gv
    s = aggregate_cpdags([g, g, PDAG(3), g], 0.2)
    text = summary_to_dot(s)
    assert 'penwidth=3.750, label="0.75"' in text
