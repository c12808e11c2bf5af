"""Decision matrices and their CSV interchange format."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np

from perfsense.schema import FeatureRecord, FeatureSchema


@dataclass(frozen=True)
class DecisionMatrix:
    """n evaluation objects (rows) by m indicators (columns).

    Columns follow the schema's declaration order. ``values`` is a float
    array and must not contain NaN.
    """

    values: np.ndarray
    columns: tuple[str, ...]
    row_ids: tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError(f"decision matrix must be 2-D, got shape {values.shape}")
        n, m = values.shape
        if len(self.columns) != m:
            raise ValueError(f"{m} columns but {len(self.columns)} column names")
        if len(self.row_ids) != n:
            raise ValueError(f"{n} rows but {len(self.row_ids)} row ids")
        if np.isnan(values).any():
            r, c = np.argwhere(np.isnan(values))[0]
            raise ValueError(f"missing cell at row {self.row_ids[r]!r}, column {self.columns[c]!r}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "row_ids", tuple(str(r) for r in self.row_ids))

    @classmethod
    def from_array(cls, values, columns: Sequence[str] | None = None, row_ids: Sequence[str] | None = None):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        n, m = values.shape
        columns = tuple(columns) if columns is not None else tuple(f"x{j}" for j in range(m))
        row_ids = tuple(row_ids) if row_ids is not None else tuple(str(i) for i in range(n))
        return cls(values, columns, row_ids)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def select(self, columns: Sequence[str]) -> DecisionMatrix:
        idx = [self.columns.index(c) for c in columns]
        return DecisionMatrix(self.values[:, idx], tuple(columns), self.row_ids)

    def reorder(self, schema: FeatureSchema) -> DecisionMatrix:
        """Columns rearranged into *schema* order (extra columns dropped)."""
        missing = [n for n in schema.names if n not in self.columns]
        if missing:
            raise ValueError(f"matrix lacks schema indicators {missing}")
        return self.select(schema.names)

    def append_row(self, row, row_id: str) -> DecisionMatrix:
        row = np.asarray(row, dtype=float).reshape(1, -1)
        return DecisionMatrix(np.vstack([self.values, row]), self.columns, self.row_ids + (row_id,))

    def with_values(self, values) -> DecisionMatrix:
        return DecisionMatrix(values, self.columns, self.row_ids)


def from_records(schema: FeatureSchema, records: Iterable[FeatureRecord]) -> DecisionMatrix:
    """One row per record; records missing any indicator are rejected."""
    rows, ids = [], []
    for rec in records:
        missing = [n for n in schema.names if n not in rec.values]
        if missing:
            raise ValueError(f"record {rec.device_id}@{rec.timestamp} is missing {missing}")
        rows.append([rec.values[n] for n in schema.names])
        ids.append(f"{rec.device_id}@{rec.timestamp}")
    if not rows:
        raise ValueError("no records")
    return DecisionMatrix(np.array(rows), tuple(schema.names), tuple(ids))


def read_matrix_csv(fh: TextIO) -> DecisionMatrix:
    """Read a CSV whose header is ``row_id,<indicator>...``."""
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError("empty matrix CSV") from None
    if len(header) < 2:
        raise ValueError("matrix CSV needs a row_id column and at least one indicator")
    columns = tuple(h.strip() for h in header[1:])
    rows, ids = [], []
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != len(header):
            raise ValueError(f"matrix CSV line {lineno}: expected {len(header)} fields, got {len(rec)}")
        ids.append(rec[0])
        try:
            rows.append([float(v) for v in rec[1:]])
        except ValueError:
            raise ValueError(f"matrix CSV line {lineno} (row {rec[0]!r}): non-numeric cell") from None
    if not rows:
        raise ValueError("matrix CSV has no data rows")
    return DecisionMatrix(np.array(rows), columns, tuple(ids))


def write_matrix_csv(X: DecisionMatrix, fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(("row_id",) + X.columns)
    for rid, row in zip(X.row_ids, X.values):
        w.writerow([rid] + [repr(float(v)) for v in row])


def matrix_to_csv(X: DecisionMatrix) -> str:
    buf = io.StringIO()
    write_matrix_csv(X, buf)
    return buf.getvalue()
