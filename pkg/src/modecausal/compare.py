"""Side-by-side view of total causal effects and mean |SHAP| per mode."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.stats import spearmanr

from .effects import EffectsTable

DEFAULT_SHAP_THRESHOLD = 0.005


class CompareError(ValueError):
    pass


@dataclass(frozen=True)
class ComparisonRow:
    mode: str
    variable: str
    ate: float
    mean_abs_shap: float
    flagged: bool  # structurally zero effect yet the model leans on the variable


@dataclass(frozen=True)
class Comparison:
    rows: tuple[ComparisonRow, ...]
    spearman: Mapping[str, float]
    threshold: float

    def modes(self) -> list[str]:
        return list(dict.fromkeys(r.mode for r in self.rows))

    def top(self, mode: str, k: int, by: str) -> set[str]:
        rows = [r for r in self.rows if r.mode == mode]
        key = (lambda r: abs(r.ate)) if by == "ate" else (lambda r: r.mean_abs_shap)
        return {r.variable for r in sorted(rows, key=key, reverse=True)[:k]}

    def to_csv(self, path: str | Path, header_comment: str | None = None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["mode", "variable", "ate", "abs_ate", "mean_abs_shap", "flag"])
            for r in self.rows:
                w.writerow([r.mode, r.variable, repr(r.ate), repr(abs(r.ate)), repr(r.mean_abs_shap),
                            "zero-effect-nonzero-shap" if r.flagged else ""])

    def report(self) -> str:
        lines = [f"mean |SHAP| flag threshold: {self.threshold}", ""]
        for mode in self.modes():
            rho = self.spearman[mode]
            lines.append(f"[{mode}] spearman(|ATE|, mean |SHAP|) = {rho:.4f}")
            lines.append(f"  top-2 by |ATE|:       {', '.join(sorted(self.top(mode, 2, 'ate')))}")
            lines.append(f"  top-2 by mean |SHAP|: {', '.join(sorted(self.top(mode, 2, 'shap')))}")
            for r in self.rows:
                if r.mode == mode and r.flagged:
                    lines.append(f"  FLAG: {r.variable} has zero causal effect but mean |SHAP| "
                                 f"{r.mean_abs_shap:.4f}")
        return "\n".join(lines) + "\n"


def compare(
    effects: EffectsTable,
    shap: Mapping[str, Mapping[str, float]],
    threshold: float = DEFAULT_SHAP_THRESHOLD,
) -> Comparison:
    """Align effects on each mode with the model's mean |SHAP| for that mode.

    ``shap`` maps class label -> feature -> mean |phi|. Every class must be a
    variable of the effects table, and the features must be exactly the
    remaining effect-table variables.
    """
    modes = list(shap)
    if not modes:
        raise CompareError("no SHAP classes to compare")
    missing = [m for m in modes if m not in effects.variables]
    if missing:
        raise CompareError(f"modes absent from the effects table: {missing}")
    causes = [v for v in effects.variables if v not in modes]
    rows = []
    spearman = {}
    for mode in modes:
        feats = list(shap[mode])
        if set(feats) != set(causes):
            extra = sorted(set(feats) - set(causes))
            lacking = sorted(set(causes) - set(feats))
            raise CompareError(
                f"variable sets differ for {mode}: only in SHAP {extra}, only in effects {lacking}"
            )
        ates = np.array([effects.get(v, mode) for v in causes])
        shaps = np.array([float(shap[mode][v]) for v in causes])
        for v, a, s in zip(causes, ates, shaps):
            rows.append(ComparisonRow(mode, v, float(a), float(s), bool(a == 0.0 and s > threshold)))
        if np.ptp(np.abs(ates)) == 0 or np.ptp(shaps) == 0:
            spearman[mode] = float("nan")
        else:
            spearman[mode] = float(spearmanr(np.abs(ates), shaps).statistic)
    return Comparison(tuple(rows), spearman, threshold)
