"""DOT serialization of PDAGs and summary graphs.

Two styles are written.  ``"plain"`` uses ``->`` for directed and ``--`` for
undirected edges inside one ``digraph`` block; it is easy to diff and to read
back but Graphviz refuses the ``--`` lines.  ``"graphviz"`` writes every edge
with ``->`` and marks undirected ones ``dir=none`` so the file renders.
"""

from __future__ import annotations

import re
from typing import Iterable

from .errors import InputError
from .graph import EdgeMark, PDAG, SummaryGraph, Vertex

STYLES = ("plain", "graphviz")

_NODE_RE = re.compile(r'^\s*"((?:[^"\\]|\\.)*)"\s*\[([^\]]*)\]\s*;\s*$')
_EDGE_RE = re.compile(
    r'^\s*"((?:[^"\\]|\\.)*)"\s*(->|--)\s*"((?:[^"\\]|\\.)*)"\s*(?:\[([^\]]*)\])?\s*;\s*$'
)
_ATTR_RE = re.compile(r'(\w+)\s*=\s*("(?:[^"\\]|\\.)*"|[^,\s]+)')


def _q(name: str) -> str:
    return '"' + name.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _unq(text: str) -> str:
    return re.sub(r"\\(.)", r"\1", text)


def _node_lines(vertices: Iterable[Vertex]) -> list[str]:
    lines = []
    for v in vertices:
        attrs = f"tier={v.tier}"
        if v.is_outcome:
            attrs += ", outcome=true"
        lines.append(f"  {_q(v.name)} [{attrs}];")
    return lines


def _edge_line(u: str, v: str, undirected: bool, style: str, attrs: str = "") -> str:
    if undirected and style == "plain":
        op = "--"
    else:
        op = "->"
    extra = []
    if undirected and style == "graphviz":
        extra.append("dir=none")
    if attrs:
        extra.append(attrs)
    tail = f" [{', '.join(extra)}]" if extra else ""
    return f"  {_q(u)} {op} {_q(v)}{tail};"


def pdag_to_dot(
    g: PDAG, *, name: str = "cpdag", style: str = "plain", comments: Iterable[str] = ()
) -> str:
    """Edge lines are sorted, so identical graphs give identical text."""
    if style not in STYLES:
        raise ValueError(f"unknown DOT style {style!r}")
    names = g.names
    lines = [f"digraph {name} {{"]
    lines += [f"  // {c}" for c in comments]
    lines += _node_lines(g.vertices)
    for u, v in g.directed_edges():
        lines.append(_edge_line(names[u], names[v], False, style))
    for a, b in g.undirected_edges():
        lines.append(_edge_line(names[a], names[b], True, style))
    lines.append("}")
    return "\n".join(lines) + "\n"


def summary_to_dot(
    s: SummaryGraph,
    *,
    name: str = "summary",
    style: str = "plain",
    max_penwidth: float = 5.0,
    comments: Iterable[str] = (),
) -> str:
    """Edge width is ``max_penwidth * frequency``; labels carry the frequency."""
    if style not in STYLES:
        raise ValueError(f"unknown DOT style {style!r}")
    names = [v.name for v in s.vertices]
    lines = [f"digraph {name} {{"]
    lines.append(f"  // graphs={s.n_graphs} threshold={s.threshold}")
    lines += [f"  // {c}" for c in comments]
    lines += _node_lines(s.vertices)
    for e in s.edges:
        freq = float(e.frequency)
        attrs = f'penwidth={max_penwidth * freq:.3f}, label="{freq:.2f}"'
        if e.mark is EdgeMark.DIRECTED_BA:
            u, v = names[e.b], names[e.a]
        else:
            u, v = names[e.a], names[e.b]
        lines.append(_edge_line(u, v, e.mark is EdgeMark.UNDIRECTED, style, attrs))
    lines.append("}")
    return "\n".join(lines) + "\n"


def _parse_attrs(text: str | None) -> dict[str, str]:
    if not text:
        return {}
    out = {}
    for key, value in _ATTR_RE.findall(text):
        if value.startswith('"'):
            value = _unq(value[1:-1])
        out[key] = value
    return out


def read_dot(text: str) -> PDAG:
    """Parse the DOT written by :func:`pdag_to_dot` (either style)."""
    nodes: list[tuple[str, int, bool]] = []
    index: dict[str, int] = {}
    directed: list[tuple[int, int]] = []
    undirected: list[tuple[int, int]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("//") or line.startswith("digraph") or line == "}":
            continue
        m = _EDGE_RE.match(line)
        if m:
            u, op, v, attrs = m.groups()
            u, v = _unq(u), _unq(v)
            if u not in index or v not in index:
                raise InputError(f"line {lineno}: edge refers to undeclared node")
            a = _parse_attrs(attrs)
            pair = (index[u], index[v])
            if op == "--" or a.get("dir") == "none":
                undirected.append(pair)
            else:
                directed.append(pair)
            continue
        m = _NODE_RE.match(line)
        if m:
            name = _unq(m.group(1))
            a = _parse_attrs(m.group(2))
            if name in index:
                raise InputError(f"line {lineno}: node {name!r} declared twice")
            index[name] = len(nodes)
            nodes.append((name, int(a.get("tier", 0)), a.get("outcome") == "true"))
            continue
        raise InputError(f"line {lineno}: cannot parse {raw!r}")
    vertices = [Vertex(i, nm, t, o) for i, (nm, t, o) in enumerate(nodes)]
    return PDAG.from_edges(vertices, directed, undirected)
