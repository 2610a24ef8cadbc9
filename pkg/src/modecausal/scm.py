"""Discrete structural causal models: ancestral sampling, exact joints, do-interventions."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from itertools import combinations, product
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dataset import Codebook, CodedDataset, Variable, default_codebook, strip_comment_lines
from .graph import GraphError, MixedGraph, d_separated

MAX_STATES = 10**6
SURVEY_PRESETS = ("northlike", "westlike", "southlike")
TOY_PRESETS = ("chain", "fork", "collider", "diamond", "confounded", "null")


class ScmError(ValueError):
    pass


@dataclass(frozen=True)
class Factor:
    """Conditional table for one node, or a one-hot choice among binary nodes.

    ``table`` has one axis per parent (indexed by code offset) and a last
    axis over the node's levels; for a choice factor the last axis runs over
    ``nodes`` and gives the probability that exactly that member equals 1.
    """

    nodes: tuple[str, ...]
    parents: tuple[str, ...]
    table: np.ndarray
    choice: bool = False


class DiscreteSCM:
    def __init__(
        self,
        dag: MixedGraph,
        levels: Mapping[str, Sequence[int]],
        factors: Sequence[Factor],
        name: str = "",
    ):
        if dag.undirected_edges or not dag.is_dag():
            raise ScmError("an SCM needs a directed acyclic graph")
        self.dag = dag
        self.name = name
        self.levels = {n: tuple(int(c) for c in levels[n]) for n in dag.nodes}
        self.factors = tuple(
            Factor(f.nodes, f.parents, np.asarray(f.table, dtype=np.float64), f.choice) for f in factors
        )
        self._validate()

    def _validate(self):
        covered: dict[str, Factor] = {}
        for n, codes in self.levels.items():
            if len(codes) < 1 or list(codes) != list(range(codes[0], codes[0] + len(codes))):
                raise ScmError(f"{n}: levels must be contiguous integers")
        for f in self.factors:
            for n in f.nodes:
                if n in covered:
                    raise ScmError(f"{n} has more than one factor")
                covered[n] = f
                if set(self.dag.parents(n)) != set(f.parents):
                    raise ScmError(
                        f"{n}: factor parents {sorted(f.parents)} differ from graph parents "
                        f"{sorted(self.dag.parents(n))}"
                    )
                if f.choice and self.levels[n] != (0, 1):
                    raise ScmError(f"choice member {n} must be binary 0/1")
            last = len(f.nodes) if f.choice else len(self.levels[f.nodes[0]])
            shape = tuple(len(self.levels[p]) for p in f.parents) + (last,)
            if f.table.shape != shape:
                raise ScmError(f"{f.nodes}: table shape {f.table.shape}, expected {shape}")
            if (f.table < 0).any() or (f.table > 1).any():
                raise ScmError(f"{f.nodes}: probabilities outside [0, 1]")
            if np.abs(f.table.sum(axis=-1) - 1.0).max(initial=0.0) > 1e-12:
                raise ScmError(f"{f.nodes}: rows do not sum to 1")
        missing = set(self.dag.nodes) - set(covered)
        if missing:
            raise ScmError(f"nodes without a factor: {sorted(missing)}")
        self._factor_of = covered

    @property
    def nodes(self) -> tuple[str, ...]:
        return self.dag.nodes

    def factor_of(self, node: str) -> Factor:
        return self._factor_of[node]

    def ordered_factors(self) -> list[Factor]:
        """Factors in an order where every parent is produced before use."""
        topo = self.dag.topological_order()
        seen, out = set(), []
        for n in topo:
            f = self._factor_of[n]
            if id(f) not in seen:
                seen.add(id(f))
                out.append(f)
        return out

    def codebook(self) -> Codebook:
        """Codebook for sampled data; survey labels where the codes agree."""
        base = default_codebook()
        variables = []
        for n in self.nodes:
            codes = self.levels[n]
            if n in base and base[n].codes == codes:
                variables.append(base[n])
            else:
                kind = "binary" if len(codes) == 2 else "ordinal"
                if len(codes) < 2:
                    codes = (codes[0], codes[0] + 1)
                variables.append(Variable(n, kind, tuple((c, str(c)) for c in codes)))
        return Codebook(tuple(variables))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "nodes": [{"name": n, "levels": list(self.levels[n])} for n in self.nodes],
            "edges": [list(e) for e in self.dag.sorted_directed()],
            "cpts": [
                {"node": f.nodes[0], "parents": list(f.parents),
                 "rows": f.table.reshape(-1, f.table.shape[-1]).tolist()}
                for f in self.factors if not f.choice
            ],
            "choices": [
                {"members": list(f.nodes), "parents": list(f.parents),
                 "rows": f.table.reshape(-1, f.table.shape[-1]).tolist()}
                for f in self.factors if f.choice
            ],
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "DiscreteSCM":
        nodes = [spec["name"] for spec in obj["nodes"]]
        levels = {spec["name"]: spec["levels"] for spec in obj["nodes"]}
        dag = MixedGraph(nodes, [tuple(e) for e in obj["edges"]])
        factors = []
        for spec in obj.get("cpts", ()):
            shape = tuple(len(levels[p]) for p in spec["parents"]) + (len(levels[spec["node"]]),)
            factors.append(Factor((spec["node"],), tuple(spec["parents"]),
                                  np.array(spec["rows"], dtype=np.float64).reshape(shape)))
        for spec in obj.get("choices", ()):
            shape = tuple(len(levels[p]) for p in spec["parents"]) + (len(spec["members"]),)
            factors.append(Factor(tuple(spec["members"]), tuple(spec["parents"]),
                                  np.array(spec["rows"], dtype=np.float64).reshape(shape), choice=True))
        return cls(dag, levels, factors, name=obj.get("name", ""))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")


def load_scm(path: str | Path) -> DiscreteSCM:
    return DiscreteSCM.from_dict(json.loads(strip_comment_lines(Path(path).read_text(encoding="utf-8"))))


def load_preset(name: str) -> DiscreteSCM:
    """Any shipped preset: survey-shaped ones and small toy structures."""
    if name not in SURVEY_PRESETS + TOY_PRESETS:
        raise ScmError(f"unknown preset {name!r}; choose from {', '.join(SURVEY_PRESETS + TOY_PRESETS)}")
    text = resources.files("modecausal").joinpath(f"data/presets/{name}.json").read_text()
    return DiscreteSCM.from_dict(json.loads(text))


def make_survey_scm(name: str) -> DiscreteSCM:
    """SCM over the survey variables shaped like one neighbourhood's graph."""
    if name not in SURVEY_PRESETS:
        raise ScmError(f"unknown survey preset {name!r}; choose from {', '.join(SURVEY_PRESETS)}")
    return load_preset(name)


# --- sampling -----------------------------------------------------------------------

def _offsets(scm: DiscreteSCM, names: Sequence[str], cols: Mapping[str, np.ndarray]) -> np.ndarray:
    if not names:
        return np.zeros(len(next(iter(cols.values()))) if cols else 0, dtype=np.int64)
    dims = [len(scm.levels[p]) for p in names]
    idx = [cols[p] - scm.levels[p][0] for p in names]
    return np.ravel_multi_index(idx, dims)


def _sample_chunk(scm: DiscreteSCM, m: int, rng: np.random.Generator) -> np.ndarray:
    cols: dict[str, np.ndarray] = {}
    for f in scm.ordered_factors():
        rows = f.table.reshape(-1, f.table.shape[-1])
        key = _offsets(scm, f.parents, cols) if f.parents else np.zeros(m, dtype=np.int64)
        cum = np.cumsum(rows[key], axis=1)
        u = rng.random(m)
        pick = np.minimum((u[:, None] >= cum).sum(axis=1), rows.shape[1] - 1)
        if f.choice:
            for j, member in enumerate(f.nodes):
                cols[member] = (pick == j).astype(np.int64)
        else:
            cols[f.nodes[0]] = pick + scm.levels[f.nodes[0]][0]
    return np.column_stack([cols[n] for n in scm.nodes]) if m else np.empty((0, len(scm.nodes)), np.int64)


def sample(scm: DiscreteSCM, n: int, seed: int = 0, chunk_size: int = 65536) -> CodedDataset:
    """Draw ``n`` rows ancestrally.

    Rows come in chunks of ``chunk_size``; chunk ``i`` uses the child seed
    sequence ``(seed, i)``, so chunks can be drawn independently and
    concatenated in order to reproduce the serial result.
    """
    if n < 0:
        raise ScmError("n must be nonnegative")
    parts = []
    for i, start in enumerate(range(0, n, chunk_size)):
        m = min(chunk_size, n - start)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
        parts.append(_sample_chunk(scm, m, rng))
    values = np.vstack(parts) if parts else np.empty((0, len(scm.nodes)), dtype=np.int64)
    return CodedDataset(scm.nodes, values, scm.codebook())


# --- exact inference ----------------------------------------------------------------

class Joint:
    """Dense joint distribution with one axis per node (indexed by code offset)."""

    def __init__(self, nodes: Sequence[str], levels: Mapping[str, tuple[int, ...]], probs: np.ndarray):
        self.nodes = tuple(nodes)
        self.levels = {n: levels[n] for n in self.nodes}
        self.probs = probs

    def axis(self, name: str) -> int:
        return self.nodes.index(name)

    def as_dict(self) -> dict[tuple[int, ...], float]:
        out = {}
        for idx in product(*(range(len(self.levels[n])) for n in self.nodes)):
            code = tuple(self.levels[n][i] for n, i in zip(self.nodes, idx))
            out[code] = float(self.probs[idx])
        return out

    def marginal(self, names: Sequence[str]) -> np.ndarray:
        """Marginal table with axes in the order of ``names``."""
        keep = [self.axis(n) for n in names]
        drop = tuple(i for i in range(len(self.nodes)) if i not in keep)
        m = self.probs.sum(axis=drop)
        remaining = sorted(keep)
        return np.transpose(m, [remaining.index(k) for k in keep])

    def expectation(self, name: str) -> float:
        codes = np.array(self.levels[name], dtype=np.float64)
        return float(self.marginal([name]) @ codes)

    def conditional_mutual_information(self, a: str, b: str, z: Sequence[str] = ()) -> float:
        """I(a; b | z) in nats."""
        z = list(z)
        pabz = self.marginal([a, b] + z)
        paz = pabz.sum(axis=1, keepdims=True)
        pbz = pabz.sum(axis=0, keepdims=True)
        pz = pabz.sum(axis=(0, 1), keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            term = pabz * np.log(pabz * pz / (paz * pbz))
        return float(np.nansum(np.where(pabz > 0, term, 0.0)))


def _factor_array(scm: DiscreteSCM, f: Factor) -> tuple[np.ndarray, list[str]]:
    if not f.choice:
        return f.table, list(f.parents) + [f.nodes[0]]
    k = len(f.nodes)
    pshape = f.table.shape[:-1]
    out = np.zeros(pshape + (2,) * k)
    for j in range(k):
        onehot = tuple(1 if i == j else 0 for i in range(k))
        out[(Ellipsis,) + onehot] = f.table[..., j]
    return out, list(f.parents) + list(f.nodes)


def _joint(scm: DiscreteSCM, replace: Mapping[str, int] | None = None) -> Joint:
    nodes = scm.nodes
    shape = tuple(len(scm.levels[n]) for n in nodes)
    if int(np.prod(shape, dtype=np.float64)) > MAX_STATES:
        raise ScmError(f"joint state space {int(np.prod(shape, dtype=np.float64))} exceeds {MAX_STATES}")
    replace = dict(replace or {})
    probs = np.ones(shape)
    for f in scm.factors:
        if any(n in replace for n in f.nodes):
            if f.choice:
                raise ScmError("interventions on members of a choice factor are not supported")
            node = f.nodes[0]
            arr = np.zeros(len(scm.levels[node]))
            arr[replace[node] - scm.levels[node][0]] = 1.0
            scope = [node]
        else:
            arr, scope = _factor_array(scm, f)
        order = sorted(range(len(scope)), key=lambda i: nodes.index(scope[i]))
        arr = np.transpose(arr, order)
        sorted_scope = [scope[i] for i in order]
        bshape = [len(scm.levels[n]) if n in sorted_scope else 1 for n in nodes]
        probs = probs * arr.reshape(bshape)
    return Joint(nodes, scm.levels, probs)


def exact_joint(scm: DiscreteSCM) -> Joint:
    """Full joint as a product of the factors."""
    return _joint(scm)


def interventional_mean(scm: DiscreteSCM, treatment: str, value: int, outcome: str) -> float:
    """E[outcome | do(treatment = value)], outcome codes read as numbers."""
    if value not in scm.levels[treatment]:
        raise ScmError(f"{value!r} is not a code of {treatment}")
    return _joint(scm, {treatment: value}).expectation(outcome)


def true_ate(scm: DiscreteSCM, treatment: str, outcome: str, t1: int, t0: int) -> float:
    """E[outcome | do(treatment=t1)] - E[outcome | do(treatment=t0)] by exact enumeration."""
    if treatment == outcome:
        raise ScmError("treatment and outcome must differ")
    for n in (treatment, outcome):
        if n not in scm.levels:
            raise GraphError(f"unknown node {n!r}")
    for c in (t1, t0):
        if c not in scm.levels[treatment]:
            raise ScmError(f"{c!r} is not a code of {treatment}")
    if not scm.dag.has_directed_path(treatment, outcome) or t1 == t0:
        return 0.0
    return interventional_mean(scm, treatment, t1, outcome) - interventional_mean(scm, treatment, t0, outcome)


def true_unit_ate(scm: DiscreteSCM, treatment: str, outcome: str) -> float:
    """Average effect of a one-code increase: full-range contrast divided by the code span."""
    codes = scm.levels[treatment]
    if len(codes) < 2:
        return 0.0
    return true_ate(scm, treatment, outcome, codes[-1], codes[0]) / (codes[-1] - codes[0])


def true_effects(scm: DiscreteSCM) -> dict[tuple[str, str], float]:
    """Per-code true ATE for every ordered pair of distinct nodes."""
    out = {}
    for t in scm.nodes:
        for o in scm.nodes:
            if t != o:
                out[(t, o)] = true_unit_ate(scm, t, o)
    return out


# --- random models ------------------------------------------------------------------

def random_dag(n_nodes: int, rng: np.random.Generator, edge_prob: float = 0.5) -> MixedGraph:
    names = [f"X{i}" for i in range(n_nodes)]
    perm = rng.permutation(n_nodes)
    edges = []
    for i in range(n_nodes):
        for j in range(i + 1, n_nodes):
            if rng.random() < edge_prob:
                edges.append((names[perm[i]], names[perm[j]]))
    return MixedGraph(names, edges)


def random_cpts(
    dag: MixedGraph,
    rng: np.random.Generator,
    clamp: tuple[float, float] = (0.1, 0.9),
    n_levels: int = 2,
) -> DiscreteSCM:
    """Random binary-or-wider CPTs with every entry in ``clamp``."""
    levels = {n: tuple(range(n_levels)) for n in dag.nodes}
    lo, hi = clamp
    factors = []
    for n in dag.nodes:
        pa = tuple(sorted(dag.parents(n), key=dag.nodes.index))
        shape = tuple(n_levels for _ in pa)
        if n_levels == 2:
            p1 = rng.uniform(lo, hi, size=shape)
            table = np.stack([1.0 - p1, p1], axis=-1)
        else:
            raw = rng.dirichlet(np.ones(n_levels), size=shape)
            table = np.clip(raw, lo, hi)
            table = table / table.sum(axis=-1, keepdims=True)
        factors.append(Factor((n,), pa, table))
    return DiscreteSCM(dag, levels, factors)


def faithfulness_margin(scm: DiscreteSCM) -> float:
    """Smallest CMI (nats) over single-node pairs that the DAG leaves d-connected given some set.

    Returns inf when every pair is d-separated under every conditioning set.
    """
    joint = exact_joint(scm)
    nodes = list(scm.nodes)
    worst = float("inf")
    for a, b in combinations(nodes, 2):
        rest = [v for v in nodes if v not in (a, b)]
        for k in range(len(rest) + 1):
            for z in combinations(rest, k):
                if not d_separated(scm.dag, {a}, {b}, z):
                    worst = min(worst, joint.conditional_mutual_information(a, b, z))
    return worst


def random_faithful_scm(
    n_nodes: int,
    rng: np.random.Generator,
    edge_prob: float = 0.5,
    clamp: tuple[float, float] = (0.1, 0.9),
    min_cmi: float = 1e-4,
    max_redraws: int = 1000,
) -> DiscreteSCM:
    """Random binary SCM whose d-connected pairs all carry CMI above ``min_cmi``.

    The DAG is drawn once; CPTs are redrawn until the margin holds.
    """
    dag = random_dag(n_nodes, rng, edge_prob)
    for _ in range(max_redraws):
        scm = random_cpts(dag, rng, clamp)
        if faithfulness_margin(scm) > min_cmi:
            return scm
    raise ScmError(f"no CPT draw reached a faithfulness margin of {min_cmi} in {max_redraws} tries")
