"""Columnar in-memory relations of 64-bit integers, hash indexes and CSV I/O."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import CSVParseError, SchemaError, ValueRangeError

INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1

_INT_RE = re.compile(r"[+-]?\d+")


@dataclass(frozen=True)
class Column:
    name: str
    values: np.ndarray


@dataclass(frozen=True)
class DistinctValues:
    count: int
    values: np.ndarray  # sorted


class HashIndex:
    """Maps every value of one attribute to the row positions holding it.

    Positions are kept in ascending order.  Tombstoned rows stay in the
    index; callers that care about liveness filter with ``Table.live_mask``.
    """

    def __init__(self, table_name: str, attribute: str):
        self.table = table_name
        self.attribute = attribute
        self.map: dict[int, list[int]] = {}

    def lookup(self, value) -> list[int]:
        return self.map.get(int(value), [])

    def keys(self) -> np.ndarray:
        return np.fromiter(self.map.keys(), dtype=np.int64, count=len(self.map))

    def add(self, value: int, position: int) -> None:
        self.map.setdefault(int(value), []).append(position)

    def __len__(self) -> int:
        return len(self.map)

    def __contains__(self, value) -> bool:
        return int(value) in self.map


class Table:
    """Named, append-only columnar relation.

    Columns are numpy ``int64`` buffers grown by doubling; ``column()``
    returns a read-only view of the first ``row_count`` entries.  Rows are
    never physically removed: ``delete_row`` only sets a tombstone.
    """

    def __init__(self, name: str, columns: Mapping[str, Iterable[int]] | Sequence[str]):
        self.name = name
        if isinstance(columns, Mapping):
            names = list(columns)
            arrays = [_as_int64(columns[c], c) for c in names]
        else:
            names = list(columns)
            arrays = [np.empty(0, dtype=np.int64) for _ in names]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate column names in table {name!r}: {names}")
        lengths = {len(a) for a in arrays}
        if len(lengths) > 1:
            raise SchemaError(f"columns of table {name!r} have unequal lengths")
        self.column_names: list[str] = names
        self.row_count = lengths.pop() if lengths else 0
        self._data = {c: a.copy() for c, a in zip(names, arrays)}
        self._deleted: np.ndarray | None = None
        self.indexes: dict[str, HashIndex] = {}
        # Bumped by every append or delete; sieves record it to detect staleness.
        self.version = 0

    def __repr__(self) -> str:
        return f"Table({self.name!r}, rows={self.row_count}, columns={self.column_names})"

    def __len__(self) -> int:
        return self.row_count

    def has_column(self, name: str) -> bool:
        return name in self._data

    def column(self, name: str) -> np.ndarray:
        try:
            buf = self._data[name]
        except KeyError:
            raise SchemaError(f"table {self.name!r} has no attribute {name!r}") from None
        view = buf[: self.row_count]
        view.flags.writeable = False
        return view

    @property
    def columns(self) -> list[Column]:
        return [Column(c, self.column(c)) for c in self.column_names]

    def row(self, position: int) -> tuple[int, ...]:
        return tuple(int(self._data[c][position]) for c in self.column_names)

    def live_mask(self) -> np.ndarray | None:
        """Boolean mask of live rows, or ``None`` when nothing was deleted."""
        if self._deleted is None:
            return None
        return ~self._deleted[: self.row_count]

    def live_positions(self) -> np.ndarray:
        mask = self.live_mask()
        if mask is None:
            return np.arange(self.row_count, dtype=np.int64)
        return np.flatnonzero(mask)

    def is_live(self, position: int) -> bool:
        if not 0 <= position < self.row_count:
            return False
        return self._deleted is None or not self._deleted[position]

    @property
    def live_count(self) -> int:
        if self._deleted is None:
            return self.row_count
        return self.row_count - int(self._deleted[: self.row_count].sum())

    def _reserve(self, extra: int) -> None:
        need = self.row_count + extra
        for c, buf in self._data.items():
            if len(buf) < need:
                grown = np.empty(max(need, 2 * len(buf), 8), dtype=np.int64)
                grown[: self.row_count] = buf[: self.row_count]
                self._data[c] = grown
        if self._deleted is not None and len(self._deleted) < need:
            grown = np.zeros(max(need, 2 * len(self._deleted), 8), dtype=bool)
            grown[: self.row_count] = self._deleted[: self.row_count]
            self._deleted = grown

    def append_row(self, row: Sequence[int]) -> int:
        if len(row) != len(self.column_names):
            raise SchemaError(
                f"row arity {len(row)} does not match {len(self.column_names)} "
                f"columns of table {self.name!r}"
            )
        values = [_check_range(int(v)) for v in row]
        self._reserve(1)
        pos = self.row_count
        for c, v in zip(self.column_names, values):
            self._data[c][pos] = v
        if self._deleted is not None:
            self._deleted[pos] = False
        self.row_count += 1
        for attr, index in self.indexes.items():
            index.add(self._data[attr][pos], pos)
        self.version += 1
        return pos

    def delete_row(self, position: int) -> None:
        """Tombstone a row.  Its values and position stay readable."""
        if not self.is_live(position):
            raise SchemaError(f"row {position} of table {self.name!r} is not live")
        if self._deleted is None:
            self._deleted = np.zeros(max(len(next(iter(self._data.values()), [])), self.row_count), dtype=bool)
        self._deleted[position] = True
        self.version += 1

    def copy(self, name: str | None = None) -> "Table":
        t = Table(name or self.name, {c: self.column(c) for c in self.column_names})
        if self._deleted is not None:
            t._deleted = self._deleted[: self.row_count].copy()
        return t

    def take(self, positions: np.ndarray, name: str | None = None) -> "Table":
        """New table holding only ``positions``, in the given order."""
        positions = np.asarray(positions, dtype=np.int64)
        return Table(name or self.name, {c: self.column(c)[positions] for c in self.column_names})


Catalog = dict  # name -> Table


def _check_range(v: int) -> int:
    if not INT64_MIN <= v <= INT64_MAX:
        raise ValueRangeError(f"value {v} does not fit in a signed 64-bit integer")
    return v


def _as_int64(values, name: str) -> np.ndarray:
    if isinstance(values, np.ndarray) and values.dtype == np.int64:
        return values
    vals = list(values) if not isinstance(values, np.ndarray) else values
    if not isinstance(vals, np.ndarray):
        for v in vals:
            _check_range(int(v))
    return np.asarray(vals, dtype=np.int64).reshape(-1)


def load_csv(path: str | os.PathLike, schema: Sequence[str], has_header: bool = False,
             name: str | None = None) -> Table:
    """Read a comma-separated file of integers into a table.

    Lines starting with ``#`` and blank lines are skipped.  With
    ``has_header`` the first remaining line is skipped as well.
    """
    path = Path(path)
    width = len(schema)
    cols: list[list[int]] = [[] for _ in schema]
    header_pending = has_header
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if header_pending:
                header_pending = False
                continue
            fields = line.split(",")
            if len(fields) != width:
                raise CSVParseError(
                    f"expected {width} fields, found {len(fields)}", lineno, str(path)
                )
            for i, f in enumerate(fields):
                f = f.strip()
                if not _INT_RE.fullmatch(f):
                    raise CSVParseError(f"not a base-10 integer: {f!r}", lineno, str(path))
                v = int(f)
                if not INT64_MIN <= v <= INT64_MAX:
                    raise ValueRangeError(
                        f"{path}:{lineno}: value {f} does not fit in a signed 64-bit integer"
                    )
                cols[i].append(v)
    return Table(name or path.stem, {c: np.asarray(v, dtype=np.int64) for c, v in zip(schema, cols)})


def read_csv_header(path: str | os.PathLike) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if line and not line.startswith("#"):
                return [f.strip() for f in line.split(",")]
    return []


def write_csv(table: Table, path: str | os.PathLike, header: bool = True,
              live_only: bool = True) -> None:
    positions = table.live_positions() if live_only else np.arange(table.row_count)
    data = np.column_stack([table.column(c)[positions] for c in table.column_names]) \
        if table.column_names else np.empty((0, 0), dtype=np.int64)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header:
            fh.write(",".join(table.column_names) + "\n")
        if len(positions):
            np.savetxt(fh, data, fmt="%d", delimiter=",")


def load_catalog(directory: str | os.PathLike) -> Catalog:
    """Load every ``*.csv`` in a directory; the header row gives the schema."""
    catalog: Catalog = {}
    for p in sorted(Path(directory).glob("*.csv")):
        schema = read_csv_header(p)
        catalog[p.stem] = load_csv(p, schema, has_header=True, name=p.stem)
    return catalog


def save_catalog(catalog: Mapping[str, Table], directory: str | os.PathLike) -> list[Path]:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, table in catalog.items():
        p = out / f"{name}.csv"
        write_csv(table, p)
        written.append(p)
    return written


def build_index(table: Table, attribute: str) -> HashIndex:
    """Build (or rebuild) the hash index on ``attribute`` and attach it to the table."""
    col = table.column(attribute)
    index = HashIndex(table.name, attribute)
    if len(col):
        order = np.argsort(col, kind="stable")
        keys, starts = np.unique(col[order], return_index=True)
        bounds = np.append(starts, len(col))
        order_list = order.tolist()
        index.map = {
            k: order_list[bounds[i]: bounds[i + 1]]
            for i, k in enumerate(keys.tolist())
        }
    table.indexes[attribute] = index
    return index


def append_row(table: Table, row: Sequence[int]) -> int:
    return table.append_row(row)


def distinct_values(table: Table, attribute: str) -> DistinctValues:
    """Exact distinct count and sorted value set over the live rows."""
    col = table.column(attribute)
    mask = table.live_mask()
    if mask is not None:
        col = col[mask]
    vals = np.unique(col)
    return DistinctValues(len(vals), vals)
