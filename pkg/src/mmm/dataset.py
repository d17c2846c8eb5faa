"""Typed columnar tables: schema files, CSV ingestion and export.

Schema files are plain text, one column per line::

    age,num
    smoker,cat,no,yes
    region,cat
    output,smoker

``cat`` columns may list their labels (the order fixes the integer codes);
without labels the sorted distinct values seen in the CSV are used. A
final ``output,<name>`` line marks the designated output column. Blank
lines and lines starting with ``#`` are ignored.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

MISSING = ("", "NA")
STD_FLOOR = 1e-12

PathLike = Union[str, Path]


class DataError(ValueError):
    """Raised for malformed schema or data files."""


@dataclass(frozen=True)
class Categorical:
    labels: tuple[str, ...]

    def __post_init__(self):
        if len(self.labels) < 2:
            raise DataError(f"categorical column needs >= 2 labels, got {self.labels}")
        if len(set(self.labels)) != len(self.labels):
            raise DataError(f"duplicate labels in {self.labels}")

    @property
    def k(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class Numeric:
    pass


ColumnKind = Union[Categorical, Numeric]


@dataclass(frozen=True)
class Schema:
    columns: tuple[tuple[str, ColumnKind], ...]
    output_index: Optional[int] = None

    def __post_init__(self):
        names = [n for n, _ in self.columns]
        if len(set(names)) != len(names):
            raise DataError("column names must be unique")
        if self.output_index is not None and not 0 <= self.output_index < len(names):
            raise DataError(f"output index {self.output_index} out of range")

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.columns]

    def kind(self, i: int) -> ColumnKind:
        return self.columns[i][1]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"no column named {name!r}") from None

    @property
    def output_name(self) -> Optional[str]:
        return None if self.output_index is None else self.columns[self.output_index][0]


def parse_schema(text: str, partial: bool = False) -> Schema:
    """Parse schema text. With ``partial``, ``cat`` lines may omit labels.

    Unlabelled categorical columns come back as ``Categorical`` with an
    empty-label placeholder only when ``partial`` is set; callers then fill
    the labels from data (see :func:`load_csv`).
    """
    columns: list[tuple[str, object]] = []
    output: Optional[str] = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in next(csv.reader([line]))]
        declared = [n for n, _ in columns]
        if len(fields) == 2 and fields[0] == "output" and fields[1] in declared:
            output = fields[1]
            continue
        if output is not None:
            raise DataError(f"schema line {lineno}: the output line must come last")
        if len(fields) < 2:
            raise DataError(f"schema line {lineno}: expected 'name,kind[,labels...]'")
        name, kind, labels = fields[0], fields[1], fields[2:]
        if kind == "num":
            if labels:
                raise DataError(f"schema line {lineno}: numeric column takes no labels")
            columns.append((name, Numeric()))
        elif kind == "cat":
            if labels:
                columns.append((name, Categorical(tuple(labels))))
            elif partial:
                columns.append((name, None))
            else:
                raise DataError(f"schema line {lineno}: categorical column {name!r} has no labels")
        else:
            raise DataError(f"schema line {lineno}: unknown kind {kind!r} (use cat or num)")
    if not columns:
        raise DataError("schema declares no columns")
    names = [n for n, _ in columns]
    if len(set(names)) != len(names):
        raise DataError("column names must be unique")
    out_idx = names.index(output) if output is not None else None
    if partial:
        return _PartialSchema(tuple(columns), out_idx)
    return Schema(tuple(columns), out_idx)


@dataclass(frozen=True)
class _PartialSchema:
    columns: tuple
    output_index: Optional[int]


def read_schema(path: PathLike) -> Schema:
    return parse_schema(Path(path).read_text(encoding="utf-8"))


def format_schema(schema: Schema) -> str:
    lines = []
    for name, kind in schema.columns:
        if isinstance(kind, Categorical):
            lines.append(_csv_line([name, "cat", *kind.labels]))
        else:
            lines.append(_csv_line([name, "num"]))
    if schema.output_index is not None:
        lines.append(_csv_line(["output", schema.output_name]))
    return "\n".join(lines) + "\n"


def write_schema(schema: Schema, path: PathLike) -> None:
    Path(path).write_text(format_schema(schema), encoding="utf-8")


def _csv_line(fields: Sequence[str]) -> str:
    import io

    buf = io.StringIO()
    csv.writer(buf, lineterminator="").writerow(fields)
    return buf.getvalue()


@dataclass
class Dataset:
    """A typed table stored column by column.

    Categorical columns hold ``int64`` codes in ``[0, k)``; numeric columns
    hold ``float64`` values, standardized unless ``transforms`` is empty for
    that column. ``transforms`` maps a numeric column index to the
    ``(mean, std)`` removed at ingestion.
    """

    schema: Schema
    columns: list[np.ndarray]
    transforms: dict[int, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.columns) != len(self.schema.columns):
            raise DataError("column count does not match schema")
        lengths = {len(c) for c in self.columns}
        if len(lengths) > 1:
            raise DataError(f"ragged columns: lengths {sorted(lengths)}")
        for i, (name, kind) in enumerate(self.schema.columns):
            col = self.columns[i]
            if isinstance(kind, Categorical):
                col = np.asarray(col, dtype=np.int64)
                if col.size and (col.min() < 0 or col.max() >= kind.k):
                    raise DataError(f"column {name!r}: code out of range [0, {kind.k})")
            else:
                col = np.asarray(col, dtype=np.float64)
                if not np.all(np.isfinite(col)):
                    raise DataError(f"column {name!r}: non-finite values")
            self.columns[i] = col

    @property
    def n_rows(self) -> int:
        return len(self.columns[0]) if self.columns else 0

    @property
    def n_columns(self) -> int:
        return len(self.columns)

    def is_categorical(self, i: int) -> bool:
        return isinstance(self.schema.kind(i), Categorical)

    def column(self, name: str) -> np.ndarray:
        return self.columns[self.schema.index(name)]

    def select(self, indices: Sequence[int], output: Optional[int] = None) -> "Dataset":
        """Sub-table of the given columns; ``output`` indexes into ``indices``."""
        schema = Schema(tuple(self.schema.columns[i] for i in indices), output)
        transforms = {
            j: self.transforms[i] for j, i in enumerate(indices) if i in self.transforms
        }
        return Dataset(schema, [self.columns[i] for i in indices], transforms)

    def inputs(self) -> "Dataset":
        """The table without its output column."""
        keep = [i for i in range(self.n_columns) if i != self.schema.output_index]
        return self.select(keep)

    def take(self, rows: np.ndarray) -> "Dataset":
        return Dataset(self.schema, [c[rows] for c in self.columns], dict(self.transforms))

    def raw_column(self, i: int) -> np.ndarray:
        """Column ``i`` mapped back through its ingestion transform."""
        col = self.columns[i]
        if i in self.transforms:
            mean, std = self.transforms[i]
            return col * std + mean
        return col


def design_matrix(dataset: Dataset, columns: Optional[list[int]] = None) -> np.ndarray:
    """Numeric columns as-is, categorical columns one-hot without the first level."""
    if columns is None:
        columns = [i for i in range(dataset.n_columns) if i != dataset.schema.output_index]
    parts = []
    for i in columns:
        kind = dataset.schema.kind(i)
        col = dataset.columns[i]
        if isinstance(kind, Categorical):
            parts.append((col[:, None] == np.arange(1, kind.k)[None, :]).astype(float))
        else:
            parts.append(col[:, None].astype(float))
    if not parts:
        return np.zeros((dataset.n_rows, 0))
    return np.hstack(parts)


def impute_simple(values: Sequence[Optional[float]], kind: ColumnKind) -> np.ndarray:
    """Fill ``None``/NaN entries with the mean (numeric) or mode (categorical).

    Ties between modal codes go to the lowest code.
    """
    present = [v for v in values if v is not None and not (isinstance(v, float) and math.isnan(v))]
    if not present:
        raise DataError("cannot impute a column with no observed values")
    if isinstance(kind, Categorical):
        codes = np.asarray(present, dtype=np.int64)
        fill = int(np.argmax(np.bincount(codes, minlength=kind.k)))
        return np.array([fill if _is_missing(v) else int(v) for v in values], dtype=np.int64)
    fill = math.fsum(present) / len(present)
    return np.array([fill if _is_missing(v) else float(v) for v in values], dtype=np.float64)


def _is_missing(v) -> bool:
    return v is None or (isinstance(v, float) and math.isnan(v))


def standardize(col: np.ndarray) -> tuple[np.ndarray, tuple[float, float]]:
    # scale first so squares of huge magnitudes do not overflow
    scale = float(np.max(np.abs(col))) if col.size else 0.0
    if scale == 0.0:
        return col - 0.0, (0.0, STD_FLOOR)
    unit = col / scale
    mean = float(np.mean(unit)) * scale
    std = max(float(np.std(unit)) * scale, STD_FLOOR)
    return (col - mean) / std, (mean, std)


def from_raw(
    schema: Schema,
    raw_columns: Sequence[np.ndarray],
    standardize_numeric: bool = True,
) -> Dataset:
    """Build a dataset from already-coded columns, standardizing numerics."""
    columns = []
    transforms = {}
    for i, (_, kind) in enumerate(schema.columns):
        col = raw_columns[i]
        if isinstance(kind, Numeric):
            col = np.asarray(col, dtype=np.float64)
            if standardize_numeric:
                col, transforms[i] = standardize(col)
        columns.append(np.asarray(col))
    return Dataset(schema, columns, transforms)


def load_csv(
    path: PathLike,
    schema_path: PathLike,
    impute: bool = False,
    standardize_numeric: bool = True,
) -> Dataset:
    """Read a headed CSV under a schema file.

    Missing cells (empty or ``NA``) raise :class:`DataError` unless
    ``impute`` is set, in which case numeric cells get the column mean and
    categorical cells the column mode.
    """
    partial = parse_schema(Path(schema_path).read_text(encoding="utf-8"), partial=True)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if r]

    names = [n for n, _ in partial.columns]
    missing_cols = [n for n in names if n not in header]
    if missing_cols:
        raise DataError(f"{path}: columns {missing_cols} missing from CSV header")
    positions = [header.index(n) for n in names]
    for lineno, r in enumerate(rows, 2):
        if len(r) != len(header):
            raise DataError(f"{path}: row {lineno} has {len(r)} fields, expected {len(header)}")

    kinds: list[ColumnKind] = []
    raw_columns = []
    for (name, kind), pos in zip(partial.columns, positions):
        cells = [r[pos].strip() for r in rows]
        if kind is None:
            labels = sorted({c for c in cells if c not in MISSING})
            kind = Categorical(tuple(labels))
        kinds.append(kind)
        values = []
        for lineno, cell in enumerate(cells, 2):
            if cell in MISSING:
                if not impute:
                    raise DataError(f"{path}: missing value at row {lineno}, column {name!r}")
                values.append(None)
            elif isinstance(kind, Categorical):
                try:
                    values.append(kind.labels.index(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: unknown label {cell!r} at row {lineno}, column {name!r}"
                    ) from None
            else:
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: cannot parse {cell!r} as a number at row {lineno}, column {name!r}"
                    ) from None
                if not math.isfinite(values[-1]):
                    raise DataError(f"{path}: non-finite value at row {lineno}, column {name!r}")
        if any(v is None for v in values):
            col = impute_simple(values, kind)
        elif isinstance(kind, Categorical):
            col = np.array(values, dtype=np.int64)
        else:
            col = np.array(values, dtype=np.float64)
        raw_columns.append(col)

    schema = Schema(tuple(zip(names, kinds)), partial.output_index)
    return from_raw(schema, raw_columns, standardize_numeric)


def format_number(x: float) -> str:
    return repr(float(x))


def write_csv(dataset: Dataset, path: PathLike, destandardize: bool = False) -> None:
    """Write ``dataset`` with labels for categorical cells.

    Numbers are written with ``repr`` so that re-reading is lossless.
    """
    cols: list[Iterable[str]] = []
    for i, (_, kind) in enumerate(dataset.schema.columns):
        if isinstance(kind, Categorical):
            cols.append([kind.labels[c] for c in dataset.columns[i]])
        else:
            values = dataset.raw_column(i) if destandardize else dataset.columns[i]
            cols.append([format_number(v) for v in values])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(dataset.schema.names)
        writer.writerows(zip(*cols))
