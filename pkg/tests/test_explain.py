import csv
from itertools import permutations
from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modecausal.explain import (
    MAX_FEATURES,
    ExplainError,
    coalition_value,
    exact_shap,
    mean_abs_shap,
    read_mean_abs_csv,
    shapley_weight,
)
from modecausal.predictor import MlpModel, init_params


def linear(w, b=0.0):
    w = np.asarray(w, dtype=float)
    return lambda X: (np.asarray(X) @ w + b)[:, None]


def nonlinear(X):
    X = np.asarray(X, dtype=float)
    a = X[:, 0] * X[:, 1] + np.sin(X[:, 2])
    b = np.maximum(X[:, 0], X[:, 2]) - X[:, 1] ** 2
    return np.column_stack([a, b])


def permutation_shap(model, x, bg, cls):
    """Average marginal contribution over every feature ordering."""
    F = len(x)
    phi = np.zeros(F)
    for order in permutations(range(F)):
        s = []
        prev = coalition_value(model, x, s, bg, cls)
        for i in order:
            s = s + [i]
            cur = coalition_value(model, x, s, bg, cls)
            phi[i] += cur - prev
            prev = cur
    return phi / factorial(F)


def test_shapley_weight_examples():
    assert shapley_weight(0, 1) == 1.0
    assert shapley_weight(0, 2) == 0.5
    assert shapley_weight(1, 3) == pytest.approx(1 / 6)
    for bad in [(-1, 3), (3, 3), (0, 0)]:
        with pytest.raises(ExplainError):
            shapley_weight(*bad)


@given(st.integers(1, 12))
def test_shapley_weights_complete(F):
    # over all subsets of the other F-1 features the weights sum to one
    total = sum(shapley_weight(k, F) * factorial(F - 1) / (factorial(k) * factorial(F - 1 - k))
                for k in range(F))
    assert abs(total - 1.0) < 1e-12


def test_coalition_value_extremes():
    rng = np.random.default_rng(0)
    bg = rng.integers(0, 5, (30, 3)).astype(float)
    x = np.array([4.0, 0.0, 2.0])
    assert coalition_value(nonlinear, x, [0, 1, 2], bg, 0) == pytest.approx(nonlinear(x[None])[0, 0])
    assert coalition_value(nonlinear, x, [], bg, 1) == pytest.approx(nonlinear(bg)[:, 1].mean())


def test_coalition_value_dummy_feature():
    rng = np.random.default_rng(1)
    bg = rng.normal(size=(20, 3))
    x = rng.normal(size=3)
    f = linear([1.0, 0.0, -2.0])
    for s in ([], [0], [2], [0, 2]):
        assert coalition_value(f, x, s + [1], bg, 0) == pytest.approx(coalition_value(f, x, s, bg, 0), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_additive_model_closed_form(F, seed):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=F)
    bg = rng.normal(size=(15, F))
    x = rng.normal(size=F)
    phi = exact_shap(linear(w, 0.3), x, bg, cls=0)
    assert np.allclose(phi, w * (x - bg.mean(axis=0)), atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_matches_permutation_definition(seed):
    rng = np.random.default_rng(seed)
    bg = rng.integers(0, 4, (12, 3)).astype(float)
    x = rng.integers(0, 4, 3).astype(float)
    for cls in (0, 1):
        assert np.allclose(exact_shap(nonlinear, x, bg, cls), permutation_shap(nonlinear, x, bg, cls), atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_efficiency(seed):
    rng = np.random.default_rng(seed)
    bg = rng.normal(size=(25, 3))
    x = rng.normal(size=3)
    phi = exact_shap(nonlinear, x, bg)
    assert np.allclose(phi.sum(axis=0), nonlinear(x[None])[0] - nonlinear(bg).mean(axis=0), atol=1e-9)


def test_dummy_and_symmetry():
    rng = np.random.default_rng(3)
    bg = rng.normal(size=(30, 3))

    def f(X):
        return (np.tanh(X[:, 0] + X[:, 1]) + X[:, 0] * X[:, 1])[:, None]

    x = np.array([0.7, 0.7, 5.0])
    bg[:, 1] = bg[:, 0]  # exchangeable in the background as well
    phi = exact_shap(f, x, bg, 0)
    assert abs(phi[2]) <= 1e-12
    assert phi[0] == pytest.approx(phi[1], abs=1e-9)


def test_single_feature():
    bg = np.array([[0.0], [2.0]])
    phi = exact_shap(linear([3.0]), np.array([5.0]), bg, 0)
    assert phi[0] == pytest.approx(3.0 * 5.0 - 3.0)


def test_errors():
    with pytest.raises(ExplainError, match="at most"):
        exact_shap(linear(np.ones(MAX_FEATURES + 1)), np.zeros(MAX_FEATURES + 1), np.zeros((2, MAX_FEATURES + 1)))
    with pytest.raises(ExplainError, match="nonempty"):
        exact_shap(linear([1.0]), np.zeros(1), np.zeros((0, 1)))
    with pytest.raises(ExplainError, match="feature counts"):
        mean_abs_shap(linear([1.0, 1.0]), np.zeros((3, 3)), np.zeros((2, 2)))


def _mlp(seed, F=4):
    rng = np.random.default_rng(seed)
    W1, b1, W2, b2 = init_params(F, 6, 3, rng)
    return MlpModel(tuple(f"f{i}" for i in range(F)), "y", ("a", "b", "c"), W1, b1, W2, b2)


def test_mean_abs_single_row_equals_abs_phi():
    m = _mlp(0)
    rng = np.random.default_rng(0)
    bg = rng.integers(0, 5, (10, 4)).astype(float)
    x = rng.integers(0, 5, (1, 4)).astype(float)
    rep = mean_abs_shap(m, x, bg, m.features, m.classes)
    assert np.allclose(rep.mean_abs, np.abs(exact_shap(m, x[0], bg)).T, atol=1e-14)
    assert rep.efficiency_gap() < 1e-9


def test_dummy_ranks_last(tmp_path):
    m = _mlp(1)
    m.W1[3] = 0.0  # f3 never reaches the hidden layer
    rng = np.random.default_rng(1)
    bg = rng.integers(0, 5, (20, 4)).astype(float)
    X = rng.integers(0, 5, (15, 4)).astype(float)
    rep = mean_abs_shap(m, X, bg, m.features, m.classes)
    for c in range(3):
        ranking = rep.ranking(c)
        assert ranking[-1] == ("f3", 0.0)
        assert [v for _, v in ranking] == sorted((v for _, v in ranking), reverse=True)
    p = tmp_path / "shap.csv"
    rep.to_csv(p, header_comment="prov")
    lines = p.read_text().splitlines()
    assert lines[0] == "# prov"
    rows = list(csv.DictReader(lines[1:]))
    assert len(rows) == 3 * 4
    for c in m.classes:
        assert sorted(r["feature"] for r in rows if r["class"] == c) == sorted(m.features)
    back = read_mean_abs_csv(p)
    assert back["b"]["f0"] == rep.mean_abs[1, 0]


def test_instances_csv(tmp_path):
    m = _mlp(2)
    rng = np.random.default_rng(2)
    rep = mean_abs_shap(m, rng.normal(size=(4, 4)), rng.normal(size=(5, 4)), m.features, m.classes)
    p = tmp_path / "inst.csv"
    rep.instances_to_csv(p)
    rows = list(csv.DictReader(p.open()))
    assert len(rows) == 4 * 3
    assert float(rows[4]["f2"]) == rep.phi[1, 2, 1]
