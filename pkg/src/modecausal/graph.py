"""Mixed graphs (directed + undirected edges), d-separation and CPDAGs."""

from __future__ import annotations

import re
from functools import cached_property
from itertools import combinations
from typing import Iterable, Iterator, Sequence


class GraphError(ValueError):
    pass


class MixedGraph:
    """Immutable graph over named nodes with directed and undirected edges.

    Nodes keep insertion order; every deterministic iteration follows it.
    """

    def __init__(
        self,
        nodes: Iterable[str],
        directed: Iterable[tuple[str, str]] = (),
        undirected: Iterable[Iterable[str]] = (),
    ):
        nodes = tuple(dict.fromkeys(nodes))
        node_set = set(nodes)
        directed = frozenset((a, b) for a, b in directed)
        undirected = frozenset(frozenset(e) for e in undirected)
        seen: set[frozenset] = set()
        for a, b in directed:
            if a == b:
                raise GraphError(f"self-loop on {a!r}")
            if a not in node_set or b not in node_set:
                raise GraphError(f"edge {a}->{b} uses an unknown node")
            pair = frozenset((a, b))
            if pair in seen:
                raise GraphError(f"more than one edge between {a!r} and {b!r}")
            seen.add(pair)
        for e in undirected:
            if len(e) != 2:
                raise GraphError(f"bad undirected edge {set(e)}")
            if not e <= node_set:
                raise GraphError(f"edge {set(e)} uses an unknown node")
            if e in seen:
                raise GraphError(f"more than one edge between {' and '.join(sorted(e))}")
            seen.add(e)
        self._nodes = nodes
        self._directed = directed
        self._undirected = undirected

    @property
    def nodes(self) -> tuple[str, ...]:
        return self._nodes

    @property
    def directed_edges(self) -> frozenset[tuple[str, str]]:
        return self._directed

    @property
    def undirected_edges(self) -> frozenset[frozenset[str]]:
        return self._undirected

    def __eq__(self, other) -> bool:
        if not isinstance(other, MixedGraph):
            return NotImplemented
        return (
            set(self._nodes) == set(other._nodes)
            and self._directed == other._directed
            and self._undirected == other._undirected
        )

    def __hash__(self):
        return hash((frozenset(self._nodes), self._directed, self._undirected))

    def __repr__(self) -> str:
        d = ", ".join(f"{a}->{b}" for a, b in self.sorted_directed())
        u = ", ".join(f"{a}--{b}" for a, b in self.sorted_undirected())
        return f"MixedGraph(nodes={list(self._nodes)}, directed=[{d}], undirected=[{u}])"

    def _order(self):
        return {n: i for i, n in enumerate(self._nodes)}

    def sorted_directed(self) -> list[tuple[str, str]]:
        pos = self._order()
        return sorted(self._directed, key=lambda e: (pos[e[0]], pos[e[1]]))

    def sorted_undirected(self) -> list[tuple[str, str]]:
        pos = self._order()
        pairs = [tuple(sorted(e, key=pos.__getitem__)) for e in self._undirected]
        return sorted(pairs, key=lambda e: (pos[e[0]], pos[e[1]]))

    def _check(self, v: str) -> None:
        if v not in self._adj:
            raise GraphError(f"unknown node {v!r}")

    @cached_property
    def _adj(self) -> dict[str, dict[str, str]]:
        # adj[a][b] is '>' for a->b, '<' for a<-b, '-' for a--b
        adj: dict[str, dict[str, str]] = {n: {} for n in self._nodes}
        for a, b in self._directed:
            adj[a][b] = ">"
            adj[b][a] = "<"
        for e in self._undirected:
            a, b = tuple(e)
            adj[a][b] = "-"
            adj[b][a] = "-"
        return adj

    def parents(self, v: str) -> set[str]:
        self._check(v)
        return {u for u, m in self._adj[v].items() if m == "<"}

    def children(self, v: str) -> set[str]:
        self._check(v)
        return {u for u, m in self._adj[v].items() if m == ">"}

    def neighbors(self, v: str) -> set[str]:
        """Nodes joined to ``v`` by an undirected edge."""
        self._check(v)
        return {u for u, m in self._adj[v].items() if m == "-"}

    def adjacent(self, a: str, b: str) -> bool:
        self._check(a)
        return b in self._adj[a]

    def adjacents(self, v: str) -> set[str]:
        self._check(v)
        return set(self._adj[v])

    def has_directed(self, a: str, b: str) -> bool:
        return (a, b) in self._directed

    def has_undirected(self, a: str, b: str) -> bool:
        return frozenset((a, b)) in self._undirected

    def skeleton(self) -> frozenset[frozenset[str]]:
        return frozenset(frozenset(e) for e in self._directed) | self._undirected

    def is_dag(self) -> bool:
        return not self._undirected and is_acyclic(self)

    def descendants(self, v: str) -> set[str]:
        self._check(v)
        return set(self._descendants[v])

    def ancestors(self, v: str) -> set[str]:
        self._check(v)
        out, stack = set(), [v]
        while stack:
            for p in self.parents(stack.pop()):
                if p not in out:
                    out.add(p)
                    stack.append(p)
        return out

    @cached_property
    def _descendants(self) -> dict[str, frozenset[str]]:
        memo: dict[str, frozenset[str]] = {}
        for v in self._nodes:
            out, stack = set(), [v]
            while stack:
                u = stack.pop()
                for c, m in self._adj[u].items():
                    if m == ">" and c not in out:
                        out.add(c)
                        stack.append(c)
            memo[v] = frozenset(out)
        return memo

    def has_directed_path(self, a: str, b: str) -> bool:
        return b in self.descendants(a)

    def topological_order(self) -> list[str]:
        """Kahn's algorithm over the directed part, ties by node order."""
        pos = self._order()
        indeg = {n: 0 for n in self._nodes}
        for _, b in self._directed:
            indeg[b] += 1
        ready = [n for n in self._nodes if indeg[n] == 0]
        out = []
        while ready:
            ready.sort(key=pos.__getitem__)
            n = ready.pop(0)
            out.append(n)
            for c in sorted(self.children(n), key=pos.__getitem__):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
        if len(out) != len(self._nodes):
            raise GraphError(f"directed cycle: {' -> '.join(find_cycle(self))}")
        return out

    def with_edges(
        self,
        add_directed: Iterable[tuple[str, str]] = (),
        remove: Iterable[tuple[str, str]] = (),
    ) -> "MixedGraph":
        """Copy with the given pairs removed, then the given directed edges added."""
        drop = {frozenset(p) for p in remove} | {frozenset(p) for p in add_directed}
        directed = [e for e in self._directed if frozenset(e) not in drop] + list(add_directed)
        undirected = [e for e in self._undirected if e not in drop]
        return MixedGraph(self._nodes, directed, undirected)

    def to_dot(self, name: str = "G", header: str | None = None) -> str:
        """DOT text: ``a -> b;`` for directed, ``a -> b [dir=none];`` for undirected."""
        lines = []
        if header:
            lines.append(f"// {header}")
        lines.append(f"digraph {name} {{")
        for n in self._nodes:
            lines.append(f"  {_dot_id(n)};")
        for a, b in self.sorted_directed():
            lines.append(f"  {_dot_id(a)} -> {_dot_id(b)};")
        for a, b in self.sorted_undirected():
            lines.append(f"  {_dot_id(a)} -> {_dot_id(b)} [dir=none];")
        lines.append("}")
        return "\n".join(lines) + "\n"


def _dot_id(name: str) -> str:
    if re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", name):
        return name
    return '"' + name.replace('"', '\\"') + '"'


_ID = r'(?:[A-Za-z_][A-Za-z0-9_]*|"(?:[^"\\]|\\.)*")'
_EDGE_RE = re.compile(rf"^\s*({_ID})\s*(->|--)\s*({_ID})\s*(\[[^\]]*\])?\s*;?\s*$")
_NODE_RE = re.compile(rf"^\s*({_ID})\s*(\[[^\]]*\])?\s*;?\s*$")


def _unquote(tok: str) -> str:
    if tok.startswith('"'):
        return tok[1:-1].replace('\\"', '"')
    return tok


def from_dot(text: str) -> MixedGraph:
    """Parse the DOT subset written by :meth:`MixedGraph.to_dot`."""
    nodes: list[str] = []
    directed, undirected = [], []
    for raw in text.splitlines():
        line = raw.split("//", 1)[0].strip()
        if not line or line.startswith("#") or line.startswith(("digraph", "graph", "}", "{")):
            continue
        m = _EDGE_RE.match(line)
        if m:
            a, op, b, attrs = _unquote(m.group(1)), m.group(2), _unquote(m.group(3)), m.group(4) or ""
            for n in (a, b):
                if n not in nodes:
                    nodes.append(n)
            if op == "--" or "dir=none" in attrs.replace(" ", ""):
                undirected.append((a, b))
            else:
                directed.append((a, b))
            continue
        m = _NODE_RE.match(line)
        if m:
            n = _unquote(m.group(1))
            if n not in ("node", "edge") and n not in nodes:
                nodes.append(n)
            continue
        raise GraphError(f"cannot parse DOT line: {raw!r}")
    return MixedGraph(nodes, directed, undirected)


def find_cycle(g: MixedGraph) -> list[str]:
    """One directed cycle as a node list (first node repeated at the end), or []."""
    colour = {n: 0 for n in g.nodes}
    stack_path: list[str] = []

    def visit(u):
        colour[u] = 1
        stack_path.append(u)
        for c in sorted(g.children(u), key=g.nodes.index):
            if colour[c] == 1:
                return stack_path[stack_path.index(c):] + [c]
            if colour[c] == 0:
                found = visit(c)
                if found:
                    return found
        stack_path.pop()
        colour[u] = 2
        return None

    for n in g.nodes:
        if colour[n] == 0:
            found = visit(n)
            if found:
                return found
    return []


def is_acyclic(g: MixedGraph) -> bool:
    """True iff the directed part has no directed cycle."""
    return not find_cycle(g)


def parents(g: MixedGraph, v: str) -> set[str]:
    return g.parents(v)


def path_blocked(g: MixedGraph, path: Sequence[str], z: Iterable[str]) -> bool:
    """Whether ``z`` blocks ``path`` in DAG ``g``.

    A non-collider on the path blocks it when conditioned on; a collider
    blocks it unless the collider or one of its descendants is in ``z``.
    """
    z = set(z)
    for a, b in zip(path, path[1:]):
        if not g.adjacent(a, b):
            raise GraphError(f"{a!r} and {b!r} are not adjacent")
    for k in range(1, len(path) - 1):
        prev, v, nxt = path[k - 1], path[k], path[k + 1]
        collider = g.has_directed(prev, v) and g.has_directed(nxt, v)
        if collider:
            if v not in z and not (g.descendants(v) & z):
                return True
        elif v in z:
            return True
    return False


def _simple_paths(g: MixedGraph, src: str, dst: str) -> Iterator[list[str]]:
    path = [src]
    on_path = {src}

    def extend(u):
        for w in sorted(g.adjacents(u), key=g.nodes.index):
            if w in on_path:
                continue
            if w == dst:
                yield path + [w]
                continue
            path.append(w)
            on_path.add(w)
            yield from extend(w)
            path.pop()
            on_path.discard(w)

    yield from extend(src)


def d_separated(g: MixedGraph, a: Iterable[str], b: Iterable[str], z: Iterable[str] = ()) -> bool:
    """True iff every path between ``a`` and ``b`` is blocked by ``z``."""
    a, b, z = set(a), set(b), set(z)
    if not a or not b:
        raise GraphError("a and b must be nonempty")
    if a & b or a & z or b & z:
        raise GraphError("a, b and z must be pairwise disjoint")
    for v in a | b | z:
        g._check(v)
    for x in sorted(a, key=g.nodes.index):
        for y in sorted(b, key=g.nodes.index):
            for path in _simple_paths(g, x, y):
                if not path_blocked(g, path, z):
                    return False
    return True


def v_structures(g: MixedGraph) -> set[tuple[str, str, str]]:
    """Unshielded colliders ``(a, c, b)`` with ``a -> c <- b``, a before b in node order."""
    out = set()
    pos = {n: i for i, n in enumerate(g.nodes)}
    for c in g.nodes:
        pa = sorted(g.parents(c), key=pos.__getitem__)
        for a, b in combinations(pa, 2):
            if not g.adjacent(a, b):
                out.add((a, c, b))
    return out


def markov_equivalence_class(g: MixedGraph) -> list[MixedGraph]:
    """All DAGs with g's skeleton and unshielded colliders (backtracking search)."""
    if not is_acyclic(g) or g.undirected_edges:
        raise GraphError("cpdag_of needs a DAG")
    pos = {n: i for i, n in enumerate(g.nodes)}
    edges = sorted((tuple(sorted(e, key=pos.__getitem__)) for e in g.skeleton()),
                   key=lambda e: (pos[e[0]], pos[e[1]]))
    target = v_structures(g)
    adjacent = {frozenset(e) for e in edges}
    results: list[MixedGraph] = []
    chosen: dict[str, set[str]] = {n: set() for n in g.nodes}  # parents so far

    def reaches(src, dst):
        # directed path src ~> dst along chosen edges
        stack, seen = [src], {src}
        while stack:
            u = stack.pop()
            if u == dst:
                return True
            for child, pars in chosen.items():
                if u in pars and child not in seen:
                    seen.add(child)
                    stack.append(child)
        return False

    def collider_ok(child, new_parent):
        for other in chosen[child]:
            if other == new_parent:
                continue
            if frozenset((other, new_parent)) not in adjacent:
                a, b = sorted((other, new_parent), key=pos.__getitem__)
                if (a, child, b) not in target:
                    return False
        return True

    def search(i):
        if i == len(edges):
            dag = MixedGraph(g.nodes, [(p, c) for c, ps in chosen.items() for p in ps])
            if v_structures(dag) == target:
                results.append(dag)
            return
        a, b = edges[i]
        for src, dst in ((a, b), (b, a)):
            if reaches(dst, src) or not collider_ok(dst, src):
                continue
            chosen[dst].add(src)
            search(i + 1)
            chosen[dst].discard(src)

    search(0)
    return results


def cpdag_of(g: MixedGraph) -> MixedGraph:
    """Completed partially directed graph of g's Markov-equivalence class."""
    members = markov_equivalence_class(g)
    directed, undirected = [], []
    for e in g.skeleton():
        a, b = tuple(e)
        if all(m.has_directed(a, b) for m in members):
            directed.append((a, b))
        elif all(m.has_directed(b, a) for m in members):
            directed.append((b, a))
        else:
            undirected.append((a, b))
    return MixedGraph(g.nodes, directed, undirected)


def structural_hamming_distance(g1: MixedGraph, g2: MixedGraph) -> int:
    """Edge additions, deletions and reorientations separating two graphs."""
    def mark(g, e):
        a, b = tuple(sorted(e))
        if g.has_directed(a, b):
            return ">"
        if g.has_directed(b, a):
            return "<"
        return "-"

    dist = 0
    for e in g1.skeleton() | g2.skeleton():
        in1, in2 = e in g1.skeleton(), e in g2.skeleton()
        if in1 != in2 or mark(g1, e) != mark(g2, e):
            dist += 1
    return dist
