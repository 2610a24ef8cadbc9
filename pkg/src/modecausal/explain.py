"""Exact Shapley attributions by coalition enumeration, with per-class mean |phi|."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from math import factorial
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dataset import CodedDataset

MAX_FEATURES = 15

#: maps an (n, n_features) float array to (n, n_classes) outputs
Classifier = Callable[[np.ndarray], np.ndarray]


class ExplainError(ValueError):
    pass


def shapley_weight(s_size: int, f_size: int) -> float:
    """|S|! (|F| - |S| - 1)! / |F|!"""
    if f_size < 1 or not 0 <= s_size <= f_size - 1:
        raise ExplainError(f"need 0 <= s_size <= f_size - 1 and f_size >= 1, got ({s_size}, {f_size})")
    return factorial(s_size) * factorial(f_size - s_size - 1) / factorial(f_size)


def _as_matrix(background) -> np.ndarray:
    if isinstance(background, CodedDataset):
        background = background.values
    bg = np.asarray(background, dtype=np.float64)
    if bg.ndim != 2 or len(bg) == 0:
        raise ExplainError("background must be a nonempty 2-D sample")
    return bg


def coalition_value(
    model: Classifier,
    instance: Sequence[float],
    s: Sequence[int],
    background,
    cls: int,
) -> float:
    """Mean class output over background rows with features in ``s`` taken from ``instance``."""
    bg = _as_matrix(background)
    x = np.asarray(instance, dtype=np.float64)
    hybrid = bg.copy()
    idx = list(s)
    hybrid[:, idx] = x[idx]
    return float(np.asarray(model(hybrid))[:, cls].mean())


def _coalition_masks(n_features: int) -> np.ndarray:
    # row m holds the membership bits of coalition m (bit i <-> feature i)
    m = np.arange(2 ** n_features)
    return ((m[:, None] >> np.arange(n_features)) & 1).astype(bool)


def coalition_table(model: Classifier, instance, background) -> np.ndarray:
    """Values of all 2^F coalitions for every class: shape (2^F, n_classes)."""
    bg = _as_matrix(background)
    x = np.asarray(instance, dtype=np.float64)
    F = bg.shape[1]
    if F > MAX_FEATURES:
        raise ExplainError(f"exact enumeration supports at most {MAX_FEATURES} features, got {F}")
    masks = _coalition_masks(F)
    hybrid = np.where(masks[:, None, :], x[None, None, :], bg[None, :, :])
    out = np.asarray(model(hybrid.reshape(-1, F)))
    return out.reshape(len(masks), len(bg), -1).mean(axis=1)


def _phi_from_table(values: np.ndarray, F: int) -> np.ndarray:
    """Shapley values (F, n_classes) from coalition values indexed by bitmask."""
    masks = np.arange(2 ** F)
    sizes = np.array([bin(m).count("1") for m in masks])
    weights = np.array([shapley_weight(k, F) if k < F else 0.0 for k in range(F + 1)])
    phi = np.zeros((F, values.shape[1]))
    for i in range(F):
        bit = 1 << i
        without = masks[(masks & bit) == 0]
        w = weights[sizes[without]]
        phi[i] = w @ (values[without | bit] - values[without])
    return phi


def exact_shap(model: Classifier, instance, background, cls: int | None = None) -> np.ndarray:
    """Shapley values of every feature for one instance.

    Sums over all subsets of the other features; feature values outside the
    coalition are filled in from each background row and the outputs
    averaged. Returns shape (F,) for one class, or (F, n_classes).
    """
    bg = _as_matrix(background)
    values = coalition_table(model, instance, bg)
    phi = _phi_from_table(values, bg.shape[1])
    return phi if cls is None else phi[:, cls]


@dataclass
class ShapReport:
    features: tuple[str, ...]
    classes: tuple[str, ...]
    phi: np.ndarray  # (instances, features, classes)
    base_value: np.ndarray  # (classes,)
    outputs: np.ndarray  # (instances, classes)

    @property
    def mean_abs(self) -> np.ndarray:
        """(classes, features) mean |phi| over instances."""
        return np.abs(self.phi).mean(axis=0).T

    def ranking(self, cls: int) -> list[tuple[str, float]]:
        vals = self.mean_abs[cls]
        # descending; stable so equal values keep feature order
        order = sorted(range(len(self.features)), key=lambda j: -vals[j])
        return [(self.features[j], float(vals[j])) for j in order]

    def efficiency_gap(self) -> float:
        recon = self.phi.sum(axis=1) + self.base_value[None, :]
        return float(np.abs(recon - self.outputs).max(initial=0.0))

    def to_csv(self, path: str | Path, header_comment: str | None = None) -> None:
        """One row per (class, feature) with the mean |phi|, ranked within class."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["class", "rank", "feature", "mean_abs_shap"])
            for c, name in enumerate(self.classes):
                for rank, (feat, val) in enumerate(self.ranking(c), start=1):
                    w.writerow([name, rank, feat, repr(val)])

    def instances_to_csv(self, path: str | Path, header_comment: str | None = None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["instance", "class"] + list(self.features))
            for i in range(self.phi.shape[0]):
                for c, name in enumerate(self.classes):
                    w.writerow([i, name] + [repr(float(v)) for v in self.phi[i, :, c]])


def read_mean_abs_csv(path: str | Path) -> dict[str, dict[str, float]]:
    """class -> feature -> mean |phi| from a file written by :meth:`ShapReport.to_csv`."""
    out: dict[str, dict[str, float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        for row in reader:
            out.setdefault(row["class"], {})[row["feature"]] = float(row["mean_abs_shap"])
    return out


def mean_abs_shap(
    model: Classifier,
    data,
    background,
    features: Sequence[str] | None = None,
    classes: Sequence[str] | None = None,
) -> ShapReport:
    """Exact Shapley values for every row of ``data`` and their per-class mean |phi|."""
    bg = _as_matrix(background)
    X = _as_matrix(data)
    F = bg.shape[1]
    if X.shape[1] != F:
        raise ExplainError("data and background have different feature counts")
    base = np.asarray(model(bg)).mean(axis=0)
    phis, outs = [], []
    for x in X:
        values = coalition_table(model, x, bg)
        phis.append(_phi_from_table(values, F))
        outs.append(np.asarray(model(x[None, :]))[0])
    n_classes = len(base)
    return ShapReport(
        features=tuple(features or [f"x{i}" for i in range(F)]),
        classes=tuple(classes or [str(c) for c in range(n_classes)]),
        phi=np.array(phis),
        base_value=base,
        outputs=np.array(outs),
    )
