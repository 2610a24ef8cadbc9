"""PC-stable structure search with collider orientation, Meek rules and background knowledge."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping

from .citest import DEFAULT_ALPHA, CiResult, chi_square_ci
from .dataset import CodedDataset, strip_comment_lines
from .graph import GraphError, MixedGraph, find_cycle

log = logging.getLogger(__name__)


class KnowledgeError(ValueError):
    pass


@dataclass(frozen=True)
class Knowledge:
    """Background constraints on edge directions.

    sinks cause nothing, sources are caused by nothing, ``forbidden`` lists
    disallowed ``a -> b`` edges, and ``required_orientations`` orient edges
    left undirected after all rules have run.
    """

    sinks: frozenset[str] = frozenset()
    sources: frozenset[str] = frozenset()
    forbidden: frozenset[tuple[str, str]] = frozenset()
    required_orientations: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "sinks", frozenset(self.sinks))
        object.__setattr__(self, "sources", frozenset(self.sources))
        object.__setattr__(self, "forbidden", frozenset(tuple(p) for p in self.forbidden))
        object.__setattr__(
            self, "required_orientations", tuple(tuple(p) for p in self.required_orientations)
        )
        both = self.sinks & self.sources
        if both:
            raise KnowledgeError(f"nodes are both sink and source: {sorted(both)}")
        for a, b in self.required_orientations:
            if not self.allows(a, b):
                raise KnowledgeError(f"required orientation {a}->{b} is forbidden")

    def allows(self, a: str, b: str) -> bool:
        """Whether an ``a -> b`` edge is permitted."""
        return a not in self.sinks and b not in self.sources and (a, b) not in self.forbidden

    def excludes_pair(self, a: str, b: str) -> bool:
        return not self.allows(a, b) and not self.allows(b, a)

    @classmethod
    def from_dict(cls, obj: Mapping) -> "Knowledge":
        return cls(
            sinks=frozenset(obj.get("sinks", ())),
            sources=frozenset(obj.get("sources", ())),
            forbidden=frozenset(tuple(p) for p in obj.get("forbidden", ())),
            required_orientations=tuple(tuple(p) for p in obj.get("required_orientations", ())),
        )

    def to_dict(self) -> dict:
        return {
            "sinks": sorted(self.sinks),
            "sources": sorted(self.sources),
            "forbidden": sorted(list(p) for p in self.forbidden),
            "required_orientations": [list(p) for p in self.required_orientations],
        }

    def restricted_to(self, nodes: Iterable[str]) -> "Knowledge":
        keep = set(nodes)
        return Knowledge(
            sinks=self.sinks & keep,
            sources=self.sources & keep,
            forbidden=frozenset(p for p in self.forbidden if set(p) <= keep),
            required_orientations=tuple(p for p in self.required_orientations if set(p) <= keep),
        )


def load_knowledge(path: str | Path | None = None, resolved: bool = False) -> Knowledge:
    """Read a JSON knowledge file; with no path, one of the shipped defaults.

    ``resolved`` selects the shipped file that also orients the edges the
    PC search leaves undirected on survey-shaped data.
    """
    if path is None:
        name = "data/knowledge_resolved.json" if resolved else "data/knowledge.json"
        text = resources.files("modecausal").joinpath(name).read_text()
    else:
        text = strip_comment_lines(Path(path).read_text(encoding="utf-8"))
    return Knowledge.from_dict(json.loads(text))


@dataclass
class SepSets:
    """Separating set per removed node pair."""

    sets: dict[frozenset[str], tuple[str, ...]] = field(default_factory=dict)

    def __getitem__(self, pair) -> tuple[str, ...]:
        return self.sets[frozenset(pair)]

    def __contains__(self, pair) -> bool:
        return frozenset(pair) in self.sets

    def __setitem__(self, pair, value) -> None:
        self.sets[frozenset(pair)] = tuple(value)

    def __len__(self) -> int:
        return len(self.sets)

    def items(self):
        return self.sets.items()


@dataclass(frozen=True)
class TestRecord:
    x: str
    y: str
    z: tuple[str, ...]
    result: CiResult


# --- working representation ---------------------------------------------------------

class _Pdag:
    """Mutable adjacency map used while orienting; marks as in MixedGraph._adj."""

    def __init__(self, g: MixedGraph):
        self.nodes = sorted(g.nodes)
        self.order = g.nodes
        self.adj: dict[str, dict[str, str]] = {n: {} for n in g.nodes}
        for a, b in g.directed_edges:
            self.adj[a][b], self.adj[b][a] = ">", "<"
        for e in g.undirected_edges:
            a, b = tuple(e)
            self.adj[a][b], self.adj[b][a] = "-", "-"

    def adjacent(self, a, b):
        return b in self.adj[a]

    def undirected(self, a, b):
        return self.adj[a].get(b) == "-"

    def directed(self, a, b):
        return self.adj[a].get(b) == ">"

    def orient(self, a, b):
        self.adj[a][b], self.adj[b][a] = ">", "<"

    def try_orient(self, a, b) -> bool:
        """Orient a->b unless a directed path b ~> a already exists."""
        if self.reaches(b, a):
            return False
        self.orient(a, b)
        return True

    def graph(self) -> MixedGraph:
        directed, undirected = [], []
        for a in self.nodes:
            for b, m in self.adj[a].items():
                if m == ">":
                    directed.append((a, b))
                elif m == "-" and a < b:
                    undirected.append((a, b))
        return MixedGraph(self.order, directed, undirected)

    def reaches(self, src, dst) -> bool:
        stack, seen = [src], {src}
        while stack:
            u = stack.pop()
            if u == dst:
                return True
            for w, m in self.adj[u].items():
                if m == ">" and w not in seen:
                    seen.add(w)
                    stack.append(w)
        return False


# --- skeleton -----------------------------------------------------------------------

def pc_skeleton(
    data: CodedDataset,
    alpha: float = DEFAULT_ALPHA,
    knowledge: Knowledge | None = None,
    max_depth: int | None = None,
    tests: list[TestRecord] | None = None,
) -> tuple[MixedGraph, SepSets]:
    """Undirected skeleton by PC-stable edge removal.

    For each conditioning size l = 0, 1, ... every remaining edge a--b is
    tested against size-l subsets of the adjacencies of a, then of b, taken
    from the graph as it stood when the level began. Candidates are visited
    lexicographically by variable name so the result does not depend on
    column order. The first separating set found is kept. Pairs that the
    knowledge forbids in both directions never receive an edge.
    """
    if len(data.columns) < 2:
        raise ValueError("need at least two variables")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    knowledge = knowledge or Knowledge()
    names = sorted(data.columns)
    adj = {v: set() for v in names}
    for a, b in combinations(names, 2):
        if not knowledge.excludes_pair(a, b):
            adj[a].add(b)
            adj[b].add(a)
    sepsets = SepSets()
    level = 0
    while True:
        if max_depth is not None and level > max_depth:
            break
        frozen = {v: sorted(adj[v]) for v in names}
        if all(len(frozen[v]) - 1 < level for v in names):
            break
        removals = []
        for a, b in combinations(names, 2):
            if b not in frozen[a]:
                continue
            found = None
            for side, other in ((a, b), (b, a)):
                pool = [v for v in frozen[side] if v != other]
                if len(pool) < level:
                    continue
                for cond in combinations(pool, level):
                    res = chi_square_ci(data, a, b, cond, alpha)
                    if tests is not None:
                        tests.append(TestRecord(a, b, cond, res))
                    if res.informative and res.independent:
                        found = cond
                        break
                if found is not None:
                    break
            if found is not None:
                removals.append((a, b, found))
        for a, b, cond in removals:
            adj[a].discard(b)
            adj[b].discard(a)
            sepsets[(a, b)] = cond
        log.debug("level %d removed %d edges", level, len(removals))
        level += 1
    undirected = [(a, b) for a in names for b in adj[a] if a < b]
    return MixedGraph(data.columns, (), undirected), sepsets


# --- orientation --------------------------------------------------------------------

def orient_colliders(
    skeleton: MixedGraph,
    sepsets: SepSets,
    knowledge: Knowledge | None = None,
) -> MixedGraph:
    """Orient a--b--c into a->b<-c for unshielded triples whose sepset omits b.

    Triples are visited in name order; an orientation that would reverse an
    edge already oriented by an earlier triple, or that the knowledge
    forbids, or that would close a directed cycle, is skipped.
    """
    knowledge = knowledge or Knowledge()
    g = _Pdag(skeleton)
    for b in g.nodes:
        nbrs = sorted(g.adj[b])
        for a, c in combinations(nbrs, 2):
            if g.adjacent(a, c):
                continue
            if (a, c) not in sepsets or b in sepsets[(a, c)]:
                continue
            for src in (a, c):
                if g.directed(b, src):
                    log.debug("collider %s->%s<-%s conflicts; keeping earlier", a, b, c)
                    continue
                if knowledge.allows(src, b):
                    g.try_orient(src, b)
    return g.graph()


def _knowledge_pass(g: _Pdag, knowledge: Knowledge) -> bool:
    changed = False
    for a in g.nodes:
        for b, m in list(g.adj[a].items()):
            if m == ">" and not knowledge.allows(a, b):
                raise KnowledgeError(f"edge {a}->{b} violates background knowledge")
            if m == "-" and a < b:
                fwd, back = knowledge.allows(a, b), knowledge.allows(b, a)
                if not fwd and not back:
                    raise KnowledgeError(f"edge {a}--{b} is forbidden in both directions")
                if fwd and not back:
                    g.orient(a, b)
                    changed = True
                elif back and not fwd:
                    g.orient(b, a)
                    changed = True
    return changed


def _rule1(g: _Pdag) -> bool:
    # a->b--c, a and c non-adjacent => b->c
    for b in g.nodes:
        for a in sorted(g.adj[b]):
            if not g.directed(a, b):
                continue
            for c in sorted(g.adj[b]):
                if c != a and g.undirected(b, c) and not g.adjacent(a, c) and g.try_orient(b, c):
                    return True
    return False


def _rule2(g: _Pdag) -> bool:
    # a->b->c with a--c => a->c
    for a in g.nodes:
        for c in sorted(g.adj[a]):
            if not g.undirected(a, c):
                continue
            for b in sorted(g.adj[a]):
                if g.directed(a, b) and g.directed(b, c) and g.try_orient(a, c):
                    return True
    return False


def _rule3(g: _Pdag) -> bool:
    # a--b, a--c, a--d, c->b, d->b, c and d non-adjacent => a->b
    for a in g.nodes:
        for b in sorted(g.adj[a]):
            if not g.undirected(a, b):
                continue
            cands = [c for c in sorted(g.adj[a]) if c != b and g.undirected(a, c) and g.directed(c, b)]
            for c, d in combinations(cands, 2):
                if not g.adjacent(c, d) and g.try_orient(a, b):
                    return True
    return False


def _rule4(g: _Pdag) -> bool:
    # a--b, d->c->b, a--d, a adjacent to c, b and d non-adjacent => a->b
    for a in g.nodes:
        for b in sorted(g.adj[a]):
            if not g.undirected(a, b):
                continue
            for c in sorted(g.adj[a]):
                if c == b or not g.directed(c, b):
                    continue
                for d in sorted(g.adj[a]):
                    if d in (b, c) or not g.undirected(a, d):
                        continue
                    if g.directed(d, c) and not g.adjacent(b, d) and g.try_orient(a, b):
                        return True
    return False


_RULES = (_rule1, _rule2, _rule3, _rule4)


def apply_meek_rules(g: MixedGraph, knowledge: Knowledge | None = None) -> MixedGraph:
    """Propagate orientations to a fixpoint with Meek's four rules plus knowledge.

    Knowledge orients every undirected edge that it allows in one direction
    only; a directed edge contradicting it raises :class:`KnowledgeError`.
    """
    if find_cycle(g):
        raise GraphError(f"directed cycle: {' -> '.join(find_cycle(g))}")
    knowledge = knowledge or Knowledge()
    w = _Pdag(g)
    _knowledge_pass(w, knowledge)
    while True:
        if any(rule(w) for rule in _RULES):
            _knowledge_pass(w, knowledge)
            continue
        break
    out = w.graph()
    if find_cycle(out):
        raise KnowledgeError(f"knowledge forces a directed cycle: {' -> '.join(find_cycle(out))}")
    return out


def apply_required(g: MixedGraph, knowledge: Knowledge) -> MixedGraph:
    """Orient remaining undirected edges listed in ``required_orientations``, then re-propagate."""
    w = _Pdag(g)
    changed = False
    for a, b in knowledge.required_orientations:
        if a in w.adj and b in w.adj and w.undirected(a, b):
            w.orient(a, b)
            changed = True
    if not changed:
        return g
    return apply_meek_rules(w.graph(), knowledge)


@dataclass
class DiscoveryResult:
    graph: MixedGraph
    skeleton: MixedGraph
    sepsets: SepSets
    tests: list[TestRecord]

    @property
    def residual_undirected(self) -> list[tuple[str, str]]:
        return self.graph.sorted_undirected()

    def report(self) -> str:
        lines = ["[separating sets]"]
        for pair, cond in sorted(self.sepsets.items(), key=lambda kv: sorted(kv[0])):
            a, b = sorted(pair)
            lines.append(f"{a} _||_ {b} | {{{', '.join(cond)}}}")
        lines.append("")
        lines.append(f"[tests performed: {len(self.tests)}]")
        for t in self.tests:
            r = t.result
            lines.append(
                f"{t.x} vs {t.y} | {{{', '.join(t.z)}}}: stat={r.statistic:.6g} dof={r.dof} "
                f"p={r.p_value:.6g} independent={r.independent} informative={r.informative}"
            )
        lines.append("")
        lines.append("[residual undirected edges]")
        if self.residual_undirected:
            for a, b in self.residual_undirected:
                lines.append(f"WARNING: {a} -- {b} left undirected; orient with domain knowledge")
        else:
            lines.append("none")
        return "\n".join(lines) + "\n"


def discover_full(
    data: CodedDataset,
    alpha: float = DEFAULT_ALPHA,
    knowledge: Knowledge | None = None,
    max_depth: int | None = None,
) -> DiscoveryResult:
    knowledge = (knowledge or Knowledge()).restricted_to(data.columns)
    tests: list[TestRecord] = []
    skel, seps = pc_skeleton(data, alpha, knowledge, max_depth=max_depth, tests=tests)
    g = orient_colliders(skel, seps, knowledge)
    g = apply_meek_rules(g, knowledge)
    g = apply_required(g, knowledge)
    return DiscoveryResult(g, skel, seps, tests)


def discover(
    data: CodedDataset,
    alpha: float = DEFAULT_ALPHA,
    knowledge: Knowledge | None = None,
    max_depth: int | None = None,
) -> MixedGraph:
    """Skeleton search, collider orientation, propagation, then required orientations."""
    return discover_full(data, alpha, knowledge, max_depth).graph
