"""Double machine learning ATEs on a causal graph, with the nuisance learners it needs."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import CodedDataset
from .graph import GraphError, MixedGraph, find_cycle

ADJUSTMENT_STRATEGY = "parents-of-treatment (backdoor)"


class EffectsError(ValueError):
    pass


@dataclass(frozen=True)
class DmlConfig:
    n_folds: int = 2
    gb_stages: int = 100
    gb_depth: int = 3
    gb_rate: float = 0.1
    lasso_lambda: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.n_folds < 2:
            raise EffectsError("n_folds must be at least 2")
        if self.gb_stages < 1:
            raise EffectsError("gb_stages must be at least 1")
        if not 0.0 < self.gb_rate <= 1.0:
            raise EffectsError("gb_rate must lie in (0, 1]")
        if self.gb_depth < 1:
            raise EffectsError("gb_depth must be at least 1")
        if self.lasso_lambda < 0:
            raise EffectsError("lasso_lambda must be nonnegative")


# --- gradient boosting ----------------------------------------------------------------

@dataclass
class _Node:
    value: float = 0.0
    feature: int = -1
    threshold: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None


def _best_split(X: np.ndarray, r: np.ndarray, w: np.ndarray):
    """Best (feature, threshold, gain) for weighted squared loss; None if no gain."""
    total_w, total_s = w.sum(), (w * r).sum()
    parent = total_s * total_s / total_w
    best = None
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        cw = np.cumsum(w[order])
        cs = np.cumsum((w * r)[order])
        # candidate cuts sit between distinct consecutive values
        cut = np.flatnonzero(xs[1:] > xs[:-1])
        if cut.size == 0:
            continue
        lw, ls = cw[cut], cs[cut]
        rw, rs = total_w - lw, total_s - ls
        gain = ls * ls / lw + rs * rs / rw - parent
        k = int(np.argmax(gain))
        if gain[k] > 1e-12 * max(1.0, abs(parent)) and (best is None or gain[k] > best[2]):
            best = (j, 0.5 * (xs[cut[k]] + xs[cut[k] + 1]), float(gain[k]))
    return best


def _grow(X, r, w, depth) -> _Node:
    node = _Node(value=float((w * r).sum() / w.sum()))
    if depth == 0 or len(r) < 2:
        return node
    split = _best_split(X, r, w)
    if split is None:
        return node
    j, thr, _ = split
    mask = X[:, j] <= thr
    node.feature, node.threshold = j, thr
    node.left = _grow(X[mask], r[mask], w[mask], depth - 1)
    node.right = _grow(X[~mask], r[~mask], w[~mask], depth - 1)
    return node


def _predict_tree(node: _Node, X: np.ndarray) -> np.ndarray:
    if node.left is None:
        return np.full(len(X), node.value)
    out = np.empty(len(X))
    mask = X[:, node.feature] <= node.threshold
    out[mask] = _predict_tree(node.left, X[mask])
    out[~mask] = _predict_tree(node.right, X[~mask])
    return out


class GradientBoostingRegressor:
    """Least-squares boosting of depth-limited regression trees.

    Rows with identical feature vectors are pooled before fitting (count
    as weight, mean target as response); with squared loss this gives the
    same trees as fitting the rows one by one, and it is much faster on
    coded data.
    """

    def __init__(self, n_stages: int = 100, max_depth: int = 3, learning_rate: float = 0.1):
        if n_stages < 1:
            raise EffectsError("n_stages must be at least 1")
        if max_depth < 1:
            raise EffectsError("max_depth must be at least 1")
        self.n_stages = n_stages
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.base_ = 0.0
        self.trees_: list[_Node] = []

    def fit(self, X, y) -> "GradientBoostingRegressor":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if len(y) == 0:
            raise EffectsError("cannot fit on empty input")
        if X.shape[1] == 0:
            X = np.zeros((len(y), 1))
        uniq, inverse, counts = np.unique(X, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.ravel()
        w = counts.astype(np.float64)
        ybar = np.bincount(inverse, weights=y, minlength=len(uniq)) / w
        self.base_ = float((w * ybar).sum() / w.sum())
        pred = np.full(len(uniq), self.base_)
        self.trees_ = []
        for _ in range(self.n_stages):
            tree = _grow(uniq, ybar - pred, w, self.max_depth)
            self.trees_.append(tree)
            pred += self.learning_rate * _predict_tree(tree, uniq)
        return self

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[1] == 0:
            X = np.zeros((len(X), 1))
        uniq, inverse = np.unique(X, axis=0, return_inverse=True)
        out = np.full(len(uniq), self.base_)
        for tree in self.trees_:
            out += self.learning_rate * _predict_tree(tree, uniq)
        return out[inverse.ravel()]


def gradient_boost_fit(x, y, config: DmlConfig) -> GradientBoostingRegressor:
    return GradientBoostingRegressor(config.gb_stages, config.gb_depth, config.gb_rate).fit(x, y)


# --- lasso ----------------------------------------------------------------------------

def lasso_fit(x, y, lam: float) -> float:
    """Slope minimising sum((y - b x)^2) / (2n) + lam |b|, no intercept."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise EffectsError("x and y must be equal-length vectors with at least 2 entries")
    if np.all(x == x[0]):
        raise EffectsError("x is constant")
    if lam < 0:
        raise EffectsError("lambda must be nonnegative")
    n = len(x)
    sxx = float(x @ x) / n
    sxy = float(x @ y) / n
    return float(np.sign(sxy) * max(abs(sxy) - lam, 0.0) / sxx)


# --- DML ------------------------------------------------------------------------------

def _fold_ids(data: CodedDataset, cols: Sequence[str], n_folds: int, seed: int) -> np.ndarray:
    """Fold per row from a seeded permutation of the rows in canonical sorted order."""
    idx = [data.index(c) for c in cols]
    keys = data.values[:, idx]
    canonical = np.lexsort(keys.T[::-1]) if keys.shape[1] else np.arange(data.n)
    perm = np.random.default_rng(seed).permutation(data.n)
    folds = np.empty(data.n, dtype=np.int64)
    folds[canonical[perm]] = np.arange(data.n) % n_folds
    return folds


def dml_residuals(
    data: CodedDataset,
    treatment: str,
    outcome: str,
    z: Sequence[str],
    config: DmlConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Cross-fitted outcome and treatment residuals."""
    z = list(z)
    if treatment in z or outcome in z:
        raise EffectsError("treatment and outcome must not be in the adjustment set")
    if treatment == outcome:
        raise EffectsError("treatment and outcome must differ")
    if data.n < 10 * config.n_folds:
        raise EffectsError(f"need at least {10 * config.n_folds} rows for {config.n_folds}-fold cross-fitting")
    t = data.column(treatment).astype(np.float64)
    o = data.column(outcome).astype(np.float64)
    if np.all(t == t[0]):
        raise EffectsError(f"treatment {treatment!r} is constant; effect not identifiable")
    Z = data.values[:, [data.index(c) for c in z]].astype(np.float64)
    folds = _fold_ids(data, z + [treatment, outcome], config.n_folds, config.seed)
    t_res, o_res = np.empty(data.n), np.empty(data.n)
    for k in range(config.n_folds):
        test = folds == k
        train = ~test
        if not z:
            t_hat = np.full(test.sum(), t[train].mean())
            o_hat = np.full(test.sum(), o[train].mean())
        else:
            t_hat = gradient_boost_fit(Z[train], t[train], config).predict(Z[test])
            o_hat = gradient_boost_fit(Z[train], o[train], config).predict(Z[test])
        t_res[test] = t[test] - t_hat
        o_res[test] = o[test] - o_hat
    return o_res, t_res


def dml_ate(
    data: CodedDataset,
    treatment: str,
    outcome: str,
    z: Sequence[str],
    config: DmlConfig | None = None,
) -> float:
    """ATE per unit of treatment code by cross-fitted residual-on-residual lasso.

    Residuals are standardised before the final lasso step and the slope is
    mapped back to the original units.
    """
    config = config or DmlConfig()
    o_res, t_res = dml_residuals(data, treatment, outcome, z, config)
    st, so = t_res.std(), o_res.std()
    if st == 0:
        raise EffectsError(f"treatment {treatment!r} has no variation left after adjustment")
    if so == 0:
        return 0.0
    return lasso_fit(t_res / st, o_res / so, config.lasso_lambda) * so / st


def adjustment_set(g: MixedGraph, treatment: str, outcome: str) -> set[str]:
    """Parents of the treatment; refuses when the treatment has an undirected edge."""
    if treatment == outcome:
        raise EffectsError("treatment and outcome must differ")
    g.adjacents(outcome)  # raises on unknown node
    cyc = find_cycle(g)
    if cyc:
        raise GraphError(f"directed cycle: {' -> '.join(cyc)}")
    nbrs = g.neighbors(treatment)
    if nbrs:
        other = sorted(nbrs)[0]
        raise EffectsError(
            f"undirected edge {treatment} -- {other} makes the adjustment set ambiguous"
        )
    return g.parents(treatment)


@dataclass(frozen=True)
class EffectsTable:
    """Cause-by-effect ATE matrix; NaN on the diagonal."""

    variables: tuple[str, ...]
    values: np.ndarray
    strategy: str = ADJUSTMENT_STRATEGY

    def get(self, cause: str, effect: str) -> float:
        return float(self.values[self.variables.index(cause), self.variables.index(effect)])

    def to_csv(self, path: str | Path, decimals: int | None = 2, header_comment: str | None = None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cause"] + list(self.variables))
            for i, cause in enumerate(self.variables):
                row = [cause]
                for j in range(len(self.variables)):
                    v = self.values[i, j]
                    if i == j:
                        row.append("-")
                    elif decimals is None:
                        row.append(repr(float(v)))
                    else:
                        row.append(f"{v + 0.0:.{decimals}f}")
                w.writerow(row)

    @classmethod
    def from_csv(cls, path: str | Path) -> "EffectsTable":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
        variables = tuple(rows[0][1:])
        values = np.full((len(variables), len(variables)), np.nan)
        for i, r in enumerate(rows[1:]):
            for j, cell in enumerate(r[1:]):
                if cell != "-":
                    values[i, j] = float(cell)
        return cls(variables, values)


def total_effects_table(
    g: MixedGraph,
    data: CodedDataset,
    config: DmlConfig | None = None,
) -> EffectsTable:
    """DML estimate for every ordered pair joined by a directed path; exact zeros elsewhere."""
    config = config or DmlConfig()
    cyc = find_cycle(g)
    if cyc:
        raise GraphError(f"directed cycle: {' -> '.join(cyc)}")
    variables = tuple(g.nodes)
    missing = [v for v in variables if v not in data.columns]
    if missing:
        raise EffectsError(f"graph nodes missing from data: {missing}")
    values = np.zeros((len(variables), len(variables)))
    for i, cause in enumerate(variables):
        values[i, i] = np.nan
        for j, effect in enumerate(variables):
            if i == j or not g.has_directed_path(cause, effect):
                continue
            z = sorted(adjustment_set(g, cause, effect), key=variables.index)
            values[i, j] = dml_ate(data, cause, effect, z, config)
    return EffectsTable(variables, values)
