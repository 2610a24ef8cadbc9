"""Integer-coded tabular data: codebook, CSV loading, cleaning, splitting, SMOTE."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

#: Marker stored in a cell whose label is one of the codebook's invalid responses.
INVALID = -999

MODE_COLUMNS = ("Car", "Public", "Walk")
PREDICTORS = ("hhinc", "sex", "race_x", "hhveh_x", "hhsize_x", "age_x", "distance_x", "work_purp")


class DataError(ValueError):
    """Raised for malformed input data or codebooks."""


@dataclass(frozen=True)
class Variable:
    name: str
    kind: str
    levels: tuple[tuple[int, str], ...]
    invalid_labels: frozenset[str] = frozenset()
    description: str = ""

    def __post_init__(self):
        if self.kind not in ("binary", "ordinal"):
            raise DataError(f"variable {self.name!r}: unknown kind {self.kind!r}")
        codes = [c for c, _ in self.levels]
        if len(set(codes)) != len(codes):
            raise DataError(f"variable {self.name!r}: duplicate codes")
        if sorted(codes) != list(range(min(codes), min(codes) + len(codes))):
            raise DataError(f"variable {self.name!r}: codes must be contiguous")
        if self.kind == "binary" and len(codes) != 2:
            raise DataError(f"variable {self.name!r}: binary variables need exactly 2 levels")
        if len(codes) < 2:
            raise DataError(f"variable {self.name!r}: need at least 2 levels")

    @property
    def codes(self) -> tuple[int, ...]:
        return tuple(sorted(c for c, _ in self.levels))

    @property
    def min_code(self) -> int:
        return min(c for c, _ in self.levels)

    @property
    def max_code(self) -> int:
        return max(c for c, _ in self.levels)

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def decode(self, cell: str) -> int:
        """Map a CSV cell (integer code or exact label) to a code.

        Integers are returned unchanged even when out of range so that
        :func:`clean` can drop those rows later.
        """
        text = cell.strip()
        try:
            return int(text)
        except ValueError:
            pass
        for code, label in self.levels:
            if text == label:
                return code
        if text in self.invalid_labels:
            return INVALID
        raise KeyError(text)


@dataclass(frozen=True)
class Codebook:
    variables: tuple[Variable, ...]

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise DataError("codebook has duplicate variable names")

    def __getitem__(self, name: str) -> Variable:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    def __contains__(self, name: str) -> bool:
        return any(v.name == name for v in self.variables)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.variables)

    def subset(self, names: Iterable[str]) -> "Codebook":
        return Codebook(tuple(self[n] for n in names))

    @classmethod
    def from_dict(cls, obj: Mapping) -> "Codebook":
        shared = frozenset(obj.get("invalid_labels", ()))
        variables = []
        for spec in obj["variables"]:
            variables.append(
                Variable(
                    name=spec["name"],
                    kind=spec["kind"],
                    levels=tuple((int(c), str(lbl)) for c, lbl in spec["levels"]),
                    invalid_labels=shared | frozenset(spec.get("invalid_labels", ())),
                    description=spec.get("description", ""),
                )
            )
        return cls(tuple(variables))

    def to_dict(self) -> dict:
        return {
            "variables": [
                {
                    "name": v.name,
                    "kind": v.kind,
                    "description": v.description,
                    "levels": [[c, lbl] for c, lbl in v.levels],
                    "invalid_labels": sorted(v.invalid_labels),
                }
                for v in self.variables
            ]
        }


def load_codebook(path: str | Path | None = None) -> Codebook:
    """Read a JSON codebook; with no path, the shipped survey codebook."""
    if path is None:
        text = resources.files("modecausal").joinpath("data/codebook.json").read_text()
    else:
        text = Path(path).read_text(encoding="utf-8")
    return Codebook.from_dict(json.loads(strip_comment_lines(text)))


def strip_comment_lines(text: str) -> str:
    """Drop lines starting with '#' (provenance headers on JSON files)."""
    return "\n".join(ln for ln in text.splitlines() if not ln.startswith("#"))


def default_codebook() -> Codebook:
    return load_codebook()


def simple_codebook(names: Sequence[str], n_levels: int | Sequence[int] = 2, start: int = 0) -> Codebook:
    """Codebook with unlabelled integer levels, used for synthetic variables."""
    if isinstance(n_levels, int):
        n_levels = [n_levels] * len(names)
    variables = []
    for name, k in zip(names, n_levels):
        variables.append(
            Variable(
                name=name,
                kind="binary" if k == 2 else "ordinal",
                levels=tuple((start + i, str(start + i)) for i in range(k)),
            )
        )
    return Codebook(tuple(variables))


@dataclass(frozen=True)
class CodedDataset:
    """Rows of small-integer codes over a fixed, ordered column list."""

    columns: tuple[str, ...]
    values: np.ndarray
    codebook: Codebook = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.int64)
        if values.ndim != 2 or values.shape[1] != len(self.columns):
            values = values.reshape(-1, len(self.columns))
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "columns", tuple(self.columns))
        missing = [c for c in self.columns if c not in self.codebook]
        if missing:
            raise DataError(f"columns not in codebook: {missing}")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def __len__(self) -> int:
        return self.n

    def index(self, name: str) -> int:
        try:
            return self.columns.index(name)
        except ValueError:
            raise KeyError(f"unknown variable {name!r}") from None

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.index(name)]

    def variable(self, name: str) -> Variable:
        return self.codebook[name]

    def take(self, rows) -> "CodedDataset":
        return CodedDataset(self.columns, self.values[np.asarray(rows, dtype=np.int64)], self.codebook)

    def select(self, names: Sequence[str]) -> "CodedDataset":
        idx = [self.index(n) for n in names]
        return CodedDataset(tuple(names), self.values[:, idx], self.codebook)

    def append(self, rows: np.ndarray) -> "CodedDataset":
        rows = np.asarray(rows, dtype=np.int64).reshape(-1, len(self.columns))
        return CodedDataset(self.columns, np.vstack([self.values, rows]), self.codebook)

    def valid_mask(self) -> np.ndarray:
        """Boolean per row: every cell is an in-range code."""
        mask = np.ones(self.n, dtype=bool)
        for j, name in enumerate(self.columns):
            var = self.codebook[name]
            col = self.values[:, j]
            mask &= (col >= var.min_code) & (col <= var.max_code)
        return mask

    def to_csv(self, path: str | Path, header_comment: str | None = None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.columns)
            writer.writerows(self.values.tolist())


def load_csv(path: str | Path, codebook: Codebook) -> CodedDataset:
    """Load a UTF-8 CSV, keeping exactly the codebook variables in codebook order.

    Lines starting with ``#`` before the header are treated as comments.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh]
    start = 0
    while start < len(lines) and lines[start].startswith("#"):
        start += 1
    reader = csv.reader(lines[start:])
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError(f"{path}: empty file") from None
    missing = [v for v in codebook.names if v not in header]
    if missing:
        raise DataError(f"{path}: missing variable column(s) {missing}")
    positions = [header.index(v) for v in codebook.names]
    variables = list(codebook.variables)
    rows = []
    for rowno, row in enumerate(reader, start=1):
        if not row:
            continue
        coded = []
        for var, pos in zip(variables, positions):
            cell = row[pos] if pos < len(row) else ""
            try:
                coded.append(var.decode(cell))
            except KeyError:
                raise DataError(
                    f"{path}: row {rowno}, column {var.name!r}: cannot decode value {cell!r}"
                ) from None
        rows.append(coded)
    values = np.array(rows, dtype=np.int64).reshape(-1, len(variables))
    return CodedDataset(codebook.names, values, codebook)


def clean(data: CodedDataset, codebook: Codebook | None = None) -> CodedDataset:
    """Drop every row holding an invalid-response marker or an out-of-range code."""
    if codebook is not None and codebook is not data.codebook:
        data = CodedDataset(data.columns, data.values, codebook)
    mask = data.valid_mask()
    if mask.all():
        return data
    return data.take(np.flatnonzero(mask))


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[tuple[str, float], ...]
    stratify_on: str
    seed: int = 0

    def __post_init__(self):
        fr = [f for _, f in self.fractions]
        if not fr or any(not (0.0 < f <= 1.0) for f in fr):
            raise DataError("split fractions must lie in (0, 1]")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise DataError(f"split fractions sum to {sum(fr)!r}, not 1")


def _apportion(m: int, fractions: Sequence[float]) -> list[int]:
    # largest-remainder; ties go to the larger fraction, then the earlier part
    exact = [m * f for f in fractions]
    counts = [int(np.floor(e + 1e-9)) for e in exact]
    leftover = m - sum(counts)
    order = sorted(
        range(len(fractions)),
        key=lambda i: (-(exact[i] - counts[i]), -fractions[i], i),
    )
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def stratified_split(data: CodedDataset, spec: SplitSpec) -> list[CodedDataset]:
    """Partition rows so every stratum is spread across parts in proportion."""
    fractions = [f for _, f in spec.fractions]
    labels = data.column(spec.stratify_on)
    rng = np.random.default_rng(spec.seed)
    parts: list[list[np.ndarray]] = [[] for _ in fractions]
    for value in np.unique(labels):
        rows = np.flatnonzero(labels == value)
        if len(rows) < len(fractions):
            raise DataError(
                f"stratum {spec.stratify_on}={value} has {len(rows)} rows; "
                f"need at least {len(fractions)}"
            )
        rows = rows[rng.permutation(len(rows))]
        counts = _apportion(len(rows), fractions)
        start = 0
        for k, c in enumerate(counts):
            parts[k].append(rows[start:start + c])
            start += c
    out = []
    for chunks in parts:
        idx = np.sort(np.concatenate(chunks)) if chunks else np.array([], dtype=np.int64)
        out.append(data.take(idx))
    return out


@dataclass(frozen=True)
class SmoteDraw:
    """Provenance of one synthetic row (indices refer to the input dataset)."""

    label: int
    donor: int
    neighbor: int
    u: float
    raw: np.ndarray


def _nearest(points: np.ndarray, donors: np.ndarray, k: int) -> np.ndarray:
    # k nearest same-class rows of each donor, self excluded; ties by row order
    out = np.empty((len(donors), k), dtype=np.int64)
    pts = points.astype(np.float64)
    for s in range(0, len(donors), 256):
        block = donors[s:s + 256]
        d2 = ((pts[block, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        d2[np.arange(len(block)), block] = np.inf
        out[s:s + len(block)] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


def smote_draws(data: CodedDataset, class_var: str, k: int = 5, seed: int = 0) -> list[SmoteDraw]:
    """Synthetic-row draws needed to bring every class up to the majority count."""
    if k < 1:
        raise DataError("k must be at least 1")
    labels = data.column(class_var)
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2:
        raise DataError(f"{class_var} has fewer than 2 classes")
    target = counts.max()
    feat_idx = [j for j, c in enumerate(data.columns) if c != class_var]
    X = data.values[:, feat_idx]
    rng = np.random.default_rng(seed)
    draws = []
    for cls, cnt in zip(classes, counts):
        need = int(target - cnt)
        if need == 0:
            continue
        if cnt < k + 1:
            raise DataError(f"class {class_var}={cls} has {cnt} rows; SMOTE needs at least k+1={k + 1}")
        members = np.flatnonzero(labels == cls)
        donor_pos = rng.integers(0, cnt, size=need)
        pick = rng.integers(0, k, size=need)
        u = rng.random(need)
        uniq, inverse = np.unique(donor_pos, return_inverse=True)
        nbrs = _nearest(X[members], uniq, k)
        for i in range(need):
            d = members[donor_pos[i]]
            z = members[nbrs[inverse[i], pick[i]]]
            raw = X[d] + u[i] * (X[z] - X[d])
            draws.append(SmoteDraw(int(cls), int(d), int(z), float(u[i]), raw))
    return draws


def _round_to_codes(raw: np.ndarray, variables: Sequence[Variable]) -> np.ndarray:
    lo = np.array([v.min_code for v in variables])
    hi = np.array([v.max_code for v in variables])
    return np.clip(np.floor(raw + 0.5), lo, hi).astype(np.int64)


def smote(data: CodedDataset, class_var: str, k: int = 5, seed: int = 0) -> CodedDataset:
    """Oversample minority classes of ``class_var`` to the majority count.

    Synthetic rows interpolate between a random class member and one of its
    ``k`` nearest same-class neighbours (Euclidean on codes), then snap each
    feature to the nearest valid code. They are appended after the input rows.
    """
    draws = smote_draws(data, class_var, k, seed)
    if not draws:
        return data
    feat_idx = [j for j, c in enumerate(data.columns) if c != class_var]
    variables = [data.codebook[data.columns[j]] for j in feat_idx]
    cls_j = data.index(class_var)
    new = np.empty((len(draws), len(data.columns)), dtype=np.int64)
    raw = np.array([d.raw for d in draws])
    new[:, feat_idx] = _round_to_codes(raw, variables)
    new[:, cls_j] = [d.label for d in draws]
    return data.append(new)


def add_mode_column(data: CodedDataset, name: str = "mode") -> CodedDataset:
    """Collapse the one-hot Car/Public/Walk columns into one 3-class column.

    Codes are 0=Car, 1=Public, 2=Walk. Rows without exactly one mode flag are
    rejected.
    """
    onehot = np.stack([data.column(m) for m in MODE_COLUMNS], axis=1)
    if not np.all(onehot.sum(axis=1) == 1):
        bad = int(np.flatnonzero(onehot.sum(axis=1) != 1)[0])
        raise DataError(f"row {bad + 1} does not have exactly one mode flag set")
    mode = onehot.argmax(axis=1)
    keep = [c for c in data.columns if c not in MODE_COLUMNS]
    mode_var = Variable(name, "ordinal", tuple((i, m) for i, m in enumerate(MODE_COLUMNS)))
    codebook = Codebook(tuple(data.codebook[c] for c in keep) + (mode_var,))
    values = np.column_stack([data.values[:, [data.index(c) for c in keep]], mode])
    return CodedDataset(tuple(keep) + (name,), values, codebook)
