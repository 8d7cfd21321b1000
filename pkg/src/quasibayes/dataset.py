"""Column-oriented numeric tables and CSV ingestion."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError, SchemaError

LAYOUTS = ("cross-section", "time-series")

# ivqr_sample.csv is gen_ivqr_ex2(200, make_rng(IVQR_SAMPLE_SEED))
IVQR_SAMPLE_SEED = 20240501


@dataclass(frozen=True)
class Dataset:
    """Named real columns of equal length.

    Time-series rows are assumed to be in time order.
    """

    columns: Mapping[str, np.ndarray]
    layout: str = "cross-section"

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise InvalidArgumentError(f"layout must be one of {LAYOUTS}")
        cols = {}
        n = None
        for name, values in self.columns.items():
            arr = np.array(values, dtype=float, ndmin=1)
            if arr.ndim != 1:
                raise InvalidArgumentError(f"column {name!r} is not one-dimensional")
            if n is None:
                n = arr.size
            elif arr.size != n:
                raise InvalidArgumentError(
                    f"column {name!r} has {arr.size} rows, expected {n}"
                )
            arr.setflags(write=False)
            cols[name] = arr
        if not cols or n == 0:
            raise InvalidArgumentError("dataset needs at least one column and one row")
        object.__setattr__(self, "columns", cols)

    @property
    def n(self) -> int:
        return next(iter(self.columns.values())).size

    @property
    def names(self) -> list:
        return list(self.columns)

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise SchemaError(f"missing column {name!r}", column=name) from None

    def __contains__(self, name):
        return name in self.columns

    def matrix(self, names: Sequence[str], intercept: bool = False) -> np.ndarray:
        """Stack the named columns into an ``n x k`` array."""
        cols = [self[name] for name in names]
        if intercept:
            cols.insert(0, np.ones(self.n))
        if not cols:
            raise InvalidArgumentError("no columns selected")
        return np.column_stack(cols)

    def require(self, names: Iterable[str]) -> None:
        for name in names:
            self[name]

    def head(self, rows: int) -> "Dataset":
        return Dataset({k: v[:rows] for k, v in self.columns.items()}, self.layout)

    @classmethod
    def from_arrays(cls, layout="cross-section", **columns) -> "Dataset":
        return cls(columns, layout)


def load_csv(path, schema: Optional[Sequence[str]] = None,
             layout: str = "cross-section") -> Dataset:
    """Parse a headed, comma-separated numeric file.

    ``schema`` lists columns that must be present; only those are kept when
    given. Every kept cell must parse as a finite float.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, no header row") from None
        rows = [r for r in reader if r and any(cell.strip() for cell in r)]

    if len(set(header)) != len(header):
        raise SchemaError(f"{path}: duplicate column names in header")
    wanted = list(header) if schema is None else list(schema)
    for name in wanted:
        if name not in header:
            raise SchemaError(f"{path}: missing column {name!r}", column=name)
    index = {name: header.index(name) for name in wanted}

    data = {name: np.empty(len(rows)) for name in wanted}
    for i, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise SchemaError(
                f"{path}: line {i} has {len(row)} cells, header has {len(header)}", row=i
            )
        for name, j in index.items():
            cell = row[j].strip()
            try:
                value = float(cell)
            except ValueError:
                value = math.nan
            if not math.isfinite(value):
                raise SchemaError(
                    f"{path}: non-numeric cell {cell!r} at line {i}, column {name!r}",
                    row=i, column=name,
                )
            data[name][i - 2] = value
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return Dataset(data, layout)


def write_csv(data: Dataset, path) -> None:
    """Write ``data`` with a header row; values round-trip exactly."""
    path = Path(path)
    names = data.names
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        cols = [data[name] for name in names]
        for i in range(data.n):
            writer.writerow([repr(float(c[i])) for c in cols])


def sample_path(name: str = "ivqr_sample.csv") -> Path:
    """Location of a CSV shipped in the package ``data`` directory."""
    path = Path(__file__).with_name("data") / name
    if not path.exists():
        raise FileNotFoundError(path)
    return path
