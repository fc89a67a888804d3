"""Keeping SieveSets valid across row inserts and deletes.

Each filter has a build rule: "the ``attr`` values of relation ``p``'s live
rows that pass gate filter ``g``".  A sieve tracks, per filter, the exact
set of values that rule inserted (``SieveSet.members``).  Membership in that
set, not a ``contains`` probe, decides whether a value is already present:
a probe can hit by accident, and counting on such a hit would leave a
counting filter one increment short, so a later delete could open a false
negative.

Filters are never edited in place.  A mutated filter is a copy that is
frozen again, so readers holding the old SieveSet keep a consistent view.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import SchemaError, SieveJoinError, StaleSieveError, UnsupportedOperationError
from .sieve import SieveSet, resolve
from .storage import Table, build_index

log = logging.getLogger(__name__)

BACKWARD, CLOSING, FORWARD = "backward", "closing", "forward"


@dataclass
class MaintenanceReport:
    table: str
    position: int
    operation: str  # insert | delete
    fast_path: bool = True
    filters_touched: int = 0
    # (sieve index, kind, edge, value) per filter change
    added: list[tuple[int, str, int, int]] = field(default_factory=list)
    removed: list[tuple[int, str, int, int]] = field(default_factory=list)
    rows_examined: int = 0


@dataclass(frozen=True)
class _Rule:
    kind: str
    edge: int
    pos: int            # relation whose rows feed the filter
    attr: str           # attribute inserted
    gate: tuple[str, int] | None  # (kind, edge) of the gate filter
    gate_attr: str | None


def _rules(sieve: SieveSet) -> list[_Rule]:
    q = sieve.query
    n = q.n
    out = []
    for i in sieve.filters:
        if q.is_cycle and i == n - 1:
            gate = (BACKWARD, 0) if 0 in sieve.filters and n >= 2 else None
            out.append(_Rule(CLOSING, i, 0, q.closing_attrs()[1], gate, q.right_attr(0) if gate else None))
        else:
            gated = i + 1 < n - 1
            out.append(_Rule(BACKWARD, i, i + 1, q.left_attr(i + 1),
                             (BACKWARD, i + 1) if gated else None,
                             q.right_attr(i + 1) if gated else None))
    for i in sieve.forward:
        out.append(_Rule(FORWARD, i, i, q.right_attr(i),
                         (FORWARD, i - 1) if i >= 1 else None,
                         q.left_attr(i) if i >= 1 else None))
    return out


def _get(sieve: SieveSet, kind: str, edge: int):
    return sieve.forward[edge] if kind == FORWARD else sieve.filters[edge]


def _put(sieve: SieveSet, kind: str, edge: int, f) -> None:
    (sieve.forward if kind == FORWARD else sieve.filters)[edge] = f


def _live_mask(table: Table) -> np.ndarray:
    live = table.live_mask()
    return np.ones(table.row_count, dtype=bool) if live is None else live


def ensure_members(sieve: SieveSet, catalog: Mapping[str, Table]) -> dict:
    """Fill ``sieve.members`` by replaying every build rule (once per sieve).

    Gates are evaluated against the logical member sets, not the filter
    bits, so Bloom false positives never leak into membership.  The result
    is a subset of what each filter reports.
    """
    if sieve.members:
        return sieve.members
    q, rels = resolve(sieve.query, catalog)
    pending = _rules(sieve)
    while pending:
        ready = [r for r in pending if r.gate is None or r.gate in sieve.members]
        if not ready:
            raise SieveJoinError("cyclic gate dependencies in sieve rules")
        for r in ready:
            t = rels[r.pos]
            mask = _live_mask(t)
            if r.gate is not None:
                gate = np.fromiter(sieve.members[r.gate], dtype=np.int64)
                mask = mask & np.isin(t.column(r.gate_attr), gate)
            sieve.members[(r.kind, r.edge)] = set(np.unique(t.column(r.attr)[mask]).tolist())
        pending = [r for r in pending if r not in ready]
    return sieve.members


def _check_versions(sieves: Sequence[SieveSet], catalog: Mapping[str, Table]) -> None:
    for s in sieves:
        for name, version in s.table_versions.items():
            t = catalog.get(name)
            if t is None:
                raise StaleSieveError(f"sieve {s.query_key} references missing table {name!r}")
            if t.version != version:
                raise StaleSieveError(
                    f"sieve {s.query_key} was built on version {version} of {name!r}, "
                    f"table is at version {t.version}"
                )


class _Maintainer:
    """Applies one row change to one sieve, cascading through dependent filters."""

    def __init__(self, sieve: SieveSet, idx: int, catalog: Mapping[str, Table], report: MaintenanceReport):
        self.sieve = sieve
        self.idx = idx
        self.report = report
        self.q, self.rels = resolve(sieve.query, catalog)
        self.rules = {(r.kind, r.edge): r for r in _rules(sieve)}
        self.members = ensure_members(sieve, catalog)
        self.dirty: set[tuple[str, int]] = set()

    # rows of relation ``pos`` whose ``attr`` equals ``value``
    def _rows_with(self, pos: int, attr: str, value: int) -> Iterator[int]:
        t = self.rels[pos]
        index = t.indexes.get(attr) or build_index(t, attr)
        for r in index.lookup(value):
            if t.is_live(r):
                self.report.rows_examined += 1
                yield r

    def _passes(self, rule: _Rule, row: int) -> bool:
        if rule.gate is None:
            return True
        t = self.rels[rule.pos]
        return int(t.column(rule.gate_attr)[row]) in self.members[rule.gate]

    def _dependents(self, kind: str, edge: int) -> list[_Rule]:
        """Rules gated by filter (kind, edge)."""
        return [r for r in self.rules.values() if r.gate == (kind, edge)]

    def _writable(self, kind: str, edge: int):
        f = _get(self.sieve, kind, edge)
        if (kind, edge) not in self.dirty:
            f = f.copy()
            _put(self.sieve, kind, edge, f)
            self.dirty.add((kind, edge))
        return f

    def add(self, rule: _Rule, value: int) -> None:
        work = [(rule, value)]
        while work:
            rule, value = work.pop()
            key = (rule.kind, rule.edge)
            if value in self.members[key]:
                continue  # already a logical member: nothing downstream changes
            self.members[key].add(value)
            self._writable(*key).insert(value)
            self.report.added.append((self.idx, rule.kind, rule.edge, value))
            for dep in self._dependents(*key):
                # Rows of dep.pos gated on this value may now pass.
                for r in self._rows_with(dep.pos, dep.gate_attr, value):
                    work.append((dep, int(self.rels[dep.pos].column(dep.attr)[r])))

    def remove(self, rule: _Rule, value: int) -> None:
        work = [(rule, value)]
        while work:
            rule, value = work.pop()
            key = (rule.kind, rule.edge)
            if value not in self.members[key]:
                continue
            if any(self._passes(rule, r) for r in self._rows_with(rule.pos, rule.attr, value)):
                continue  # another live row still supplies this value
            self.members[key].discard(value)
            f = self._writable(*key)
            f.delete(value)
            self.report.removed.append((self.idx, rule.kind, rule.edge, value))
            for dep in self._dependents(*key):
                for r in self._rows_with(dep.pos, dep.gate_attr, value):
                    work.append((dep, int(self.rels[dep.pos].column(dep.attr)[r])))

    def rules_reading(self, table_name: str) -> list[_Rule]:
        return [r for r in self.rules.values() if self.q.tables[r.pos] == table_name]

    def finish(self, catalog: Mapping[str, Table]) -> None:
        for key in self.dirty:
            _get(self.sieve, *key).freeze()
        for name in self.sieve.table_versions:
            self.sieve.table_versions[name] = catalog[name].version
            self.sieve.table_rows[name] = catalog[name].row_count


def _table_name(table: Table | str, catalog: Mapping[str, Table]) -> str:
    name = table if isinstance(table, str) else table.name
    if name not in catalog:
        raise SchemaError(f"table {name!r} is not in the catalog")
    return name


def _dependents_of(name: str, sieves: Iterable[SieveSet]) -> list[SieveSet]:
    out = []
    for s in sieves:
        if name not in s.query.tables:
            raise SchemaError(f"sieve {s.query_key} does not reference table {name!r}")
        out.append(s)
    return out


def insert_with_maintenance(table: Table | str, row: Sequence[int], dependent_sieves: Sequence[SieveSet],
                            catalog: Mapping[str, Table]) -> MaintenanceReport:
    """Append ``row`` and bring every dependent sieve up to date."""
    name = _table_name(table, catalog)
    sieves = _dependents_of(name, dependent_sieves)
    _check_versions(sieves, catalog)
    t = catalog[name]
    # Replay build rules before the row exists, so members describe the old state.
    for s in sieves:
        ensure_members(s, catalog)
    pos = t.append_row(row)
    report = MaintenanceReport(name, pos, "insert")
    for idx, s in enumerate(sieves):
        m = _Maintainer(s, idx, catalog, report)
        for rule in m.rules_reading(name):
            if m._passes(rule, pos):
                m.add(rule, int(t.column(rule.attr)[pos]))
        m.finish(catalog)
    report.filters_touched = len({(i, k, e) for i, k, e, _ in report.added})
    report.fast_path = report.filters_touched == 0
    return report


def delete_with_maintenance(table: Table | str, position: int, dependent_sieves: Sequence[SieveSet],
                            catalog: Mapping[str, Table]) -> MaintenanceReport:
    """Tombstone row ``position`` and decrement counters that no longer have a supplier."""
    name = _table_name(table, catalog)
    sieves = _dependents_of(name, dependent_sieves)
    for s in sieves:
        if not s.counting:
            raise UnsupportedOperationError(
                f"sieve {s.query_key} uses plain Bloom filters; deletes need counting filters"
            )
    _check_versions(sieves, catalog)
    t = catalog[name]
    if not t.is_live(position):
        raise SchemaError(f"row {position} of table {name!r} is not live")
    for s in sieves:
        ensure_members(s, catalog)
    values = {c: int(t.column(c)[position]) for c in t.column_names}
    t.delete_row(position)
    report = MaintenanceReport(name, position, "delete")
    for idx, s in enumerate(sieves):
        m = _Maintainer(s, idx, catalog, report)
        for rule in m.rules_reading(name):
            m.remove(rule, values[rule.attr])
        m.finish(catalog)
    report.filters_touched = len({(i, k, e) for i, k, e, _ in report.removed})
    report.fast_path = report.filters_touched == 0
    return report
