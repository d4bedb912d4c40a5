"""Tabular data container, preprocessing and fold assignment.

Missing values are stored as NaN. Every estimator in the package works on
rows that are complete in the variables it touches (testwise deletion), so
a :class:`Dataset` may carry holes freely.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import norm, rankdata


class DataError(ValueError):
    """Raised for malformed input data or impossible preprocessing requests."""


@dataclass(frozen=True)
class Dataset:
    """Named numeric columns of equal length; NaN marks a missing cell."""

    names: tuple[str, ...]
    values: np.ndarray  # (n_rows, n_cols), float64, read-only
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim != 2:
            raise DataError("values must be a 2-d array")
        names = tuple(self.names)
        if values.shape[1] != len(names):
            raise DataError(f"{len(names)} names for {values.shape[1]} columns")
        for name in names:
            if not isinstance(name, str) or not name:
                raise DataError("column names must be non-empty strings")
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise DataError(f"duplicate column names: {', '.join(dupes)}")
        values.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    @classmethod
    def from_columns(cls, columns: Mapping[str, Iterable[float | None]]) -> "Dataset":
        names = list(columns)
        cols = [
            np.array([np.nan if v is None else v for v in columns[n]], dtype=float)
            for n in names
        ]
        lengths = {len(c) for c in cols}
        if len(lengths) > 1:
            raise DataError(f"columns have unequal lengths {sorted(lengths)}")
        n_rows = lengths.pop() if lengths else 0
        values = np.column_stack(cols) if cols else np.empty((n_rows, 0))
        return cls(tuple(names), values)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def __contains__(self, name: object) -> bool:
        return name in self._index

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self._index[name]]
        except KeyError:
            raise DataError(f"unknown column {name!r}") from None

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        """Columns ``names`` as an ``(n_rows, len(names))`` array."""
        self._check_names(names)
        idx = [self._index[n] for n in names]
        return self.values[:, idx]

    def select_rows(self, rows: np.ndarray) -> "Dataset":
        return Dataset(self.names, self.values[rows])

    def with_column(self, name: str, values: np.ndarray) -> "Dataset":
        """Copy with column ``name`` replaced (or appended)."""
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_rows,):
            raise DataError(f"column {name!r} has wrong length")
        if name in self._index:
            out = np.array(self.values)
            out[:, self._index[name]] = values
            return Dataset(self.names, out)
        return Dataset(self.names + (name,), np.column_stack([self.values, values]))

    def _check_names(self, names: Iterable[str]) -> None:
        for n in names:
            if n not in self._index:
                raise DataError(f"unknown column {n!r}")


def load_csv(path: str | Path, delimiter: str = ",") -> Dataset:
    """Read a headered CSV file; empty cells become missing values."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None)
        if header is None or not any(h.strip() for h in header):
            raise DataError("no header")
        header = [h.strip() for h in header]
        rows: list[list[float]] = []
        # line numbers are 1-based and count the header
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"ragged row {lineno}")
            parsed = []
            for name, cell in zip(header, row):
                cell = cell.strip()
                if cell == "":
                    parsed.append(np.nan)
                    continue
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"unparseable cell {cell!r} in column {name!r}, row {lineno}"
                    ) from None
            rows.append(parsed)
    values = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return Dataset(tuple(header), values)


def write_csv(data: Dataset, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(data.names)
        for row in data.values:
            writer.writerow(["" if np.isnan(v) else repr(float(v)) for v in row])


def jitter(values: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Add Unif(-d/5, d/5) noise, d being the smallest gap between distinct values.

    The noise is smaller than half of every gap, so distinct values never
    swap order while tied values are broken apart. NaNs pass through.
    """
    values = np.asarray(values, dtype=float)
    finite = values[np.isfinite(values)]
    distinct = np.unique(finite)
    if distinct.size < 2:
        raise DataError("jitter needs at least two distinct values")
    d = np.min(np.diff(distinct))
    noise = rng.uniform(-d / 5, d / 5, size=values.shape)
    return values + noise


def qq_transform(values: np.ndarray) -> np.ndarray:
    """Map values to normal scores ``Phi^{-1}(rank / (m + 1))`` with averaged ties."""
    values = np.asarray(values, dtype=float)
    ok = ~np.isnan(values)
    m = int(ok.sum())
    if m < 2:
        raise DataError("qq_transform needs at least two non-missing values")
    out = np.full(values.shape, np.nan)
    out[ok] = norm.ppf(rankdata(values[ok], method="average") / (m + 1))
    return out


def pairwise_complete(data: Dataset, names: Sequence[str]) -> Dataset:
    """Rows of ``data`` with no missing value among ``names``."""
    return data.select_rows(complete_rows(data, names))


def complete_rows(data: Dataset, names: Sequence[str]) -> np.ndarray:
    if not names:
        return np.ones(data.n_rows, dtype=bool)
    return ~np.isnan(data.matrix(list(names))).any(axis=1)


@dataclass(frozen=True)
class FoldAssignment:
    fold_of_row: np.ndarray
    K: int

    def rows(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of_row == k)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of_row, minlength=self.K)


def kfold_split(n: int, K: int, rng: np.random.Generator | int) -> FoldAssignment:
    """Random partition of ``range(n)`` into ``K`` folds whose sizes differ by at most one."""
    if K < 2:
        raise DataError("K must be at least 2")
    if n < K:
        raise DataError(f"cannot split {n} rows into {K} folds")
    rng = np.random.default_rng(rng)
    perm = rng.permutation(n)
    fold_of_row = np.empty(n, dtype=np.int64)
    for k, block in enumerate(np.array_split(perm, K)):
        fold_of_row[block] = k
    return FoldAssignment(fold_of_row, K)
