"""Stratified Pearson chi-square tests of conditional independence on coded data."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import gammaincc

from .dataset import CodedDataset

DEFAULT_ALPHA = 0.05
MAX_STRATA = 10**6


@dataclass(frozen=True)
class CiResult:
    statistic: float
    dof: int
    p_value: float
    independent: bool
    informative: bool


def chi2_sf(statistic: float, dof: int) -> float:
    """Upper-tail chi-square probability via the regularized upper incomplete gamma."""
    if dof <= 0:
        return 1.0
    if statistic <= 0:
        return 1.0
    return float(gammaincc(dof / 2.0, statistic / 2.0))


def _levels(data: CodedDataset, name: str) -> tuple[int, int]:
    var = data.variable(name)
    return var.min_code, var.n_levels


def contingency_table(
    data: CodedDataset,
    x: str,
    y: str,
    z_assignment: Mapping[str, int] | None = None,
) -> np.ndarray:
    """Counts of (x, y) code pairs among rows matching ``z_assignment``."""
    z_assignment = dict(z_assignment or {})
    if x == y:
        raise ValueError("x and y must differ")
    if x in z_assignment or y in z_assignment:
        raise ValueError("x and y must not be in the conditioning set")
    xi, yi = data.index(x), data.index(y)
    mask = np.ones(data.n, dtype=bool)
    for name, code in z_assignment.items():
        mask &= data.values[:, data.index(name)] == code
    x0, rx = _levels(data, x)
    y0, ry = _levels(data, y)
    xs = data.values[mask, xi] - x0
    ys = data.values[mask, yi] - y0
    return np.bincount(xs * ry + ys, minlength=rx * ry).reshape(rx, ry)


def stratified_tables(data: CodedDataset, x: str, y: str, z: Sequence[str]) -> np.ndarray:
    """All (x, y) tables, one per observed z assignment: shape (strata, rx, ry)."""
    x0, rx = _levels(data, x)
    y0, ry = _levels(data, y)
    xs = data.column(x) - x0
    ys = data.column(y) - y0
    if z:
        dims = [_levels(data, v)[1] for v in z]
        if int(np.prod(dims)) > MAX_STRATA:
            raise ValueError("conditioning set has too many joint levels")
        zcodes = [data.column(v) - _levels(data, v)[0] for v in z]
        key = np.ravel_multi_index(zcodes, dims)
        uniq, key = np.unique(key, return_inverse=True)
        n_strata = len(uniq)
    else:
        key = np.zeros(data.n, dtype=np.int64)
        n_strata = 1
    flat = (key * rx + xs) * ry + ys
    return np.bincount(flat, minlength=n_strata * rx * ry).reshape(n_strata, rx, ry)


def pearson_statistic(table: np.ndarray) -> tuple[float, int]:
    """Pearson X^2 and (r-1)(c-1) over the rows/columns with nonzero margins."""
    t = np.asarray(table, dtype=np.float64)
    t = t[t.sum(axis=1) > 0][:, t.sum(axis=0) > 0]
    r, c = t.shape
    if r < 2 or c < 2:
        return 0.0, 0
    n = t.sum()
    expected = np.outer(t.sum(axis=1), t.sum(axis=0)) / n
    return float(((t - expected) ** 2 / expected).sum()), (r - 1) * (c - 1)


def chi_square_ci(
    data: CodedDataset,
    x: str,
    y: str,
    z: Sequence[str] = (),
    alpha: float = DEFAULT_ALPHA,
    min_rows_per_cell: int = 5,
) -> CiResult:
    """Test x independent of y given z.

    Each z stratum contributes its own Pearson X^2 when it holds at least
    ``min_rows_per_cell`` rows per cell of its reduced table; statistics and
    degrees of freedom add across strata. With nothing testable the result
    is uninformative and counts as dependent.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    z = list(z)
    if x == y:
        raise ValueError("x and y must differ")
    if x in z or y in z:
        raise ValueError("x and y must not be in the conditioning set")
    if y < x:
        x, y = y, x  # canonical orientation keeps the float sums symmetric
    tables = stratified_tables(data, x, y, z)
    statistic, dof, tested = 0.0, 0, 0
    for t in tables:
        n = t.sum()
        r = int((t.sum(axis=1) > 0).sum())
        c = int((t.sum(axis=0) > 0).sum())
        if n == 0 or n < min_rows_per_cell * r * c:
            continue
        tested += 1
        s, d = pearson_statistic(t)
        statistic += s
        dof += d
    informative = tested > 0 and dof >= 1
    p = chi2_sf(statistic, dof) if informative else 1.0
    return CiResult(
        statistic=statistic,
        dof=dof,
        p_value=p,
        independent=informative and p > alpha,
        informative=informative,
    )
