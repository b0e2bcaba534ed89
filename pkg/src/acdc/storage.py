"""Sorted columnar relations, category interning and range narrowing."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .catalog import CATEGORICAL, RelationSchema
from .errors import MissingColumn, ParseError


class CategoryDictionary:
    """Per-variable bijection between category labels and dense ids.

    Ids are handed out in first-seen order, so a fixed ingestion order gives
    the same ids on every run.
    """

    def __init__(self):
        self._ids: dict[str, dict[str, int]] = {}
        self._labels: dict[str, list[str]] = {}

    def intern(self, variable: str, label) -> int:
        label = str(label)
        ids = self._ids.setdefault(variable, {})
        found = ids.get(label)
        if found is None:
            found = ids[label] = len(ids)
            self._labels.setdefault(variable, []).append(label)
        return found

    def lookup(self, variable: str, label) -> int:
        return self._ids[variable][str(label)]

    def label(self, variable: str, ident: int) -> str:
        return self._labels[variable][int(ident)]

    def size(self, variable: str) -> int:
        return len(self._labels.get(variable, ()))

    def labels(self, variable: str) -> list[str]:
        return list(self._labels.get(variable, ()))


@dataclass(eq=False)
class Relation:
    schema: RelationSchema
    columns: dict[str, np.ndarray]
    row_count: int
    sort_key: tuple[str, ...]

    @property
    def name(self) -> str:
        return self.schema.name

    @property
    def variables(self) -> tuple[str, ...]:
        return self.schema.variables

    def full_range(self) -> "Range":
        return Range(self, 0, self.row_count)

    def rows(self) -> list[tuple]:
        """Rows as tuples in schema column order (for debugging and oracles)."""
        cols = [self.columns[v].tolist() for v in self.variables]
        return list(zip(*cols))


@dataclass(frozen=True)
class Range:
    """Half-open row interval ``[begin, end)`` of a relation."""

    relation: Relation
    begin: int
    end: int

    def __len__(self) -> int:
        return self.end - self.begin

    @property
    def empty(self) -> bool:
        return self.end <= self.begin

    def column(self, variable: str) -> np.ndarray:
        return self.relation.columns[variable][self.begin:self.end]


def make_relation(schema: RelationSchema, rows: Iterable[Sequence], kinds: Mapping[str, str],
                  dictionary: CategoryDictionary,
                  key_order: Sequence[str] | None = None) -> Relation:
    """Build a relation from raw rows given in schema column order.

    Continuous values become 64-bit floats, categorical values are interned.
    Rows are sorted by the schema variables listed in ``key_order``
    (defaults to the schema order); duplicate tuples are dropped.
    """
    names = schema.variables
    raw: list[list] = [[] for _ in names]
    for lineno, row in enumerate(rows, start=1):
        if len(row) != len(names):
            raise ParseError(f"{schema.name}: row {lineno} has {len(row)} fields, "
                             f"expected {len(names)}")
        for k, (name, value) in enumerate(zip(names, row)):
            if kinds[name] == CATEGORICAL:
                raw[k].append(dictionary.intern(name, value))
            else:
                try:
                    raw[k].append(float(value))
                except (TypeError, ValueError):
                    raise ParseError(f"{schema.name}: row {lineno}: non-numeric value "
                                     f"{value!r} for continuous {name}") from None
    columns = {}
    for name, values in zip(names, raw):
        dtype = np.int64 if kinds[name] == CATEGORICAL else np.float64
        columns[name] = np.asarray(values, dtype=dtype)
    n = len(raw[0]) if raw else 0

    if key_order is None:
        sort_key = tuple(names)
    else:
        pos = {v: i for i, v in enumerate(key_order)}
        sort_key = tuple(sorted(names, key=lambda v: pos[v]))
    if n > 1:
        perm = np.lexsort([columns[v] for v in reversed(sort_key)])
        columns = {v: c[perm] for v, c in columns.items()}
        # relations are sets: repeated tuples are adjacent now, keep one
        fresh = np.ones(n, dtype=bool)
        fresh[1:] = np.any([columns[v][1:] != columns[v][:-1] for v in sort_key], axis=0)
        if not fresh.all():
            columns = {v: c[fresh] for v, c in columns.items()}
            n = int(fresh.sum())
    return Relation(schema, columns, n, sort_key)


def load_relation(source, schema: RelationSchema, dictionary: CategoryDictionary,
                  kinds: Mapping[str, str], key_order: Sequence[str] | None = None,
                  delimiter: str = ",") -> Relation:
    """Read a CSV file (or text stream) whose header names the schema columns."""
    if isinstance(source, (str, Path)):
        with open(source, newline="") as fh:
            text = fh.read()
    else:
        text = source.read()
    reader = csv.reader(io.StringIO(text), delimiter=delimiter)
    header = next(reader, None)
    if header is None:
        raise MissingColumn(f"{schema.name}: missing header row")
    header = [h.strip() for h in header]
    missing = [v for v in schema.variables if v not in header]
    if missing:
        raise MissingColumn(f"{schema.name}: columns {missing} not in header {header}")
    where = [header.index(v) for v in schema.variables]
    rows = []
    for record in reader:
        if not record or all(not f.strip() for f in record):
            continue
        if len(record) < len(header):
            raise ParseError(f"{schema.name}: short record {record!r}")
        rows.append([record[i].strip() for i in where])
    return make_relation(schema, rows, kinds, dictionary, key_order)


def narrow_range(rng: Range, variable: str, value) -> Range:
    """Maximal sub-range of ``rng`` whose rows carry ``value`` in ``variable``.

    ``variable`` must be the next sort key after those already fixed, so the
    column is sorted within ``rng`` and binary search applies.
    """
    col = rng.column(variable)
    lo = int(np.searchsorted(col, value, side="left"))
    hi = int(np.searchsorted(col, value, side="right"))
    return Range(rng.relation, rng.begin + lo, rng.begin + hi)


def intersect_values(ranges: Sequence[Range], variable: str) -> Iterator:
    """Ascending values of ``variable`` common to every range, each once.

    Sort-merge over one cursor per range: seek every cursor to the largest
    current value until they agree, emit, then step past the run.
    """
    cols = [r.column(variable) for r in ranges]
    if not cols or any(len(c) == 0 for c in cols):
        return
    cursors = [0] * len(cols)
    while True:
        target = max(c[i] for c, i in zip(cols, cursors))
        agreed = True
        for k, col in enumerate(cols):
            if col[cursors[k]] < target:
                cursors[k] = int(np.searchsorted(col, target, side="left"))
                if cursors[k] >= len(col):
                    return
                if col[cursors[k]] != target:
                    agreed = False
        if not agreed:
            continue
        yield target.item() if hasattr(target, "item") else target
        for k, col in enumerate(cols):
            cursors[k] = int(np.searchsorted(col, target, side="right"))
            if cursors[k] >= len(col):
                return
