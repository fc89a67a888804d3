"""Declarative n-way equi-join queries: chains and simple cycles.

Relations are referred to by alias; several aliases may point at the same
table (self-joins such as clique queries).  ``validate`` puts the edges in
positional order: edge ``i`` joins relation ``i`` (left) with relation
``i + 1`` (right), and for cycles the last edge is the closing condition
from relation ``n - 1`` back to relation ``0``.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from .errors import DomainError, SchemaError, StructureError

CHAIN = "chain"
CYCLE = "cycle"
TOPOLOGIES = (CHAIN, CYCLE)

_EDGE_RE = re.compile(r"^\s*([^.\s=]+)\.([^.\s=]+)\s*=\s*([^.\s=]+)\.([^.\s=]+)\s*$")


@dataclass(frozen=True)
class JoinEdge:
    left_table: str
    left_attribute: str
    right_table: str
    right_attribute: str

    @classmethod
    def parse(cls, text: str) -> "JoinEdge":
        m = _EDGE_RE.match(text)
        if not m:
            raise StructureError(f"cannot parse join edge {text!r}; expected 'A.x = B.y'")
        return cls(*m.groups())

    def flipped(self) -> "JoinEdge":
        return JoinEdge(self.right_table, self.right_attribute, self.left_table, self.left_attribute)

    def __str__(self) -> str:
        return f"{self.left_table}.{self.left_attribute} = {self.right_table}.{self.right_attribute}"


@dataclass(frozen=True)
class JoinQuery:
    relations: tuple[str, ...]
    edges: tuple[JoinEdge, ...]
    topology: str = CHAIN
    # Base table per relation; defaults to the alias itself.
    tables: tuple[str, ...] = ()
    validated: bool = field(default=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "relations", tuple(self.relations))
        object.__setattr__(self, "edges", tuple(self.edges))
        if not self.tables:
            object.__setattr__(self, "tables", tuple(self.relations))
        else:
            object.__setattr__(self, "tables", tuple(self.tables))
        if len(self.tables) != len(self.relations):
            raise StructureError("one base table is needed per relation")

    @property
    def n(self) -> int:
        return len(self.relations)

    @property
    def is_cycle(self) -> bool:
        return self.topology == CYCLE

    def table_of(self, alias: str) -> str:
        return self.tables[self.relations.index(alias)]

    @property
    def chain_edges(self) -> tuple[JoinEdge, ...]:
        return self.edges[: self.n - 1]

    @property
    def closing_edge(self) -> JoinEdge | None:
        return self.edges[self.n - 1] if self.is_cycle else None

    def left_attr(self, pos: int) -> str | None:
        """Attribute of relation ``pos`` on the edge towards ``pos - 1``."""
        return self.edges[pos - 1].right_attribute if pos >= 1 else None

    def right_attr(self, pos: int) -> str | None:
        """Attribute of relation ``pos`` on the edge towards ``pos + 1``."""
        return self.edges[pos].left_attribute if pos < self.n - 1 else None

    def closing_attrs(self) -> tuple[str, str] | None:
        """(attribute of the last relation, attribute of the first) on the closing edge."""
        e = self.closing_edge
        return (e.left_attribute, e.right_attribute) if e else None

    def chain(self) -> "JoinQuery":
        """The acyclic query obtained by dropping the closing condition."""
        if not self.is_cycle:
            return self
        return replace(self, edges=self.chain_edges, topology=CHAIN)

    def edge_set(self, offset: int = 0) -> set[frozenset]:
        out = set()
        for e in self.edges:
            a = (self.relations.index(e.left_table) + offset, e.left_attribute)
            b = (self.relations.index(e.right_table) + offset, e.right_attribute)
            out.add(frozenset((a, b)))
        return out

    @property
    def key(self) -> str:
        """Canonical template key, invariant under alias renaming."""
        parts = []
        for e in self.edges:
            a = (self.relations.index(e.left_table), e.left_attribute)
            b = (self.relations.index(e.right_table), e.right_attribute)
            a, b = sorted((a, b))
            parts.append(f"{a[0]}.{a[1]}={b[0]}.{b[1]}")
        return f"{self.topology}|{','.join(self.tables)}|{';'.join(sorted(parts))}"

    def describe(self) -> str:
        rels = " ⋈ ".join(
            a if a == t else f"{a}:{t}" for a, t in zip(self.relations, self.tables)
        )
        return f"{self.topology} {rels} on {', '.join(map(str, self.edges))}"

    def to_dict(self) -> dict:
        return {
            "relations": [a if a == t else f"{a}:{t}" for a, t in zip(self.relations, self.tables)],
            "edges": [str(e) for e in self.edges],
            "topology": self.topology,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "JoinQuery":
        aliases, tables = [], []
        for r in d["relations"]:
            alias, _, table = str(r).partition(":")
            aliases.append(alias.strip())
            tables.append((table or alias).strip())
        edges = [JoinEdge.parse(e) if isinstance(e, str) else JoinEdge(*e) for e in d.get("edges", [])]
        return cls(tuple(aliases), tuple(edges), d.get("topology", CHAIN), tuple(tables))


def load_query(path: str | os.PathLike) -> JoinQuery:
    with open(path, encoding="utf-8") as fh:
        return JoinQuery.from_dict(json.load(fh))


def dump_query(query: JoinQuery, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(query.to_dict(), fh, indent=2)
        fh.write("\n")


def _connected(n: int, pairs: Sequence[tuple[int, int]]) -> bool:
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in pairs:
        parent[find(a)] = find(b)
    return len({find(i) for i in range(n)}) <= 1


def validate(query: JoinQuery, catalog: Mapping) -> JoinQuery:
    """Resolve names against ``catalog`` and return the positionally ordered query."""
    rels = query.relations
    n = len(rels)
    if n == 0:
        raise StructureError("a query needs at least one relation")
    if len(set(rels)) != n:
        raise StructureError(f"duplicate relation aliases in {rels}")
    if query.topology not in TOPOLOGIES:
        raise StructureError(f"unknown topology {query.topology!r}")
    for alias, tname in zip(rels, query.tables):
        if tname not in catalog:
            raise SchemaError(f"unknown table {tname!r} (relation {alias!r})")
    pos = {a: i for i, a in enumerate(rels)}
    pairs = []
    for e in query.edges:
        for alias, attr in ((e.left_table, e.left_attribute), (e.right_table, e.right_attribute)):
            if alias not in pos:
                raise SchemaError(f"edge {e} references unknown relation {alias!r}")
            table = catalog[query.tables[pos[alias]]]
            if not table.has_column(attr):
                raise SchemaError(f"edge {e}: table {table.name!r} has no attribute {attr!r}")
        if e.left_table == e.right_table:
            raise StructureError(f"edge {e} joins a relation with itself")
        pairs.append((pos[e.left_table], pos[e.right_table]))
    if not _connected(n, pairs):
        raise StructureError("join graph is disconnected")

    expected = n - 1 if query.topology == CHAIN else n
    if query.topology == CYCLE and n < 2:
        raise StructureError("a cycle needs at least two relations")
    if len(query.edges) != expected:
        raise StructureError(
            f"{query.topology} over {n} relations needs {expected} edges, got {len(query.edges)}"
        )
    ordered: list[JoinEdge | None] = [None] * expected
    for e, (a, b) in zip(query.edges, pairs):
        lo, hi = min(a, b), max(a, b)
        if hi == lo + 1 and ordered[lo] is None:
            slot, left = lo, lo
        elif query.topology == CYCLE and (lo, hi) == (0, n - 1) and ordered[n - 1] is None:
            slot, left = n - 1, n - 1
        else:
            raise StructureError(f"edge {e} does not fit a {query.topology} over {rels}")
        ordered[slot] = e if pos[e.left_table] == left else e.flipped()
    return replace(query, edges=tuple(ordered), validated=True)


def subquery_offsets(q1: JoinQuery, q2: JoinQuery) -> list[int]:
    """Offsets at which ``q1`` sits in ``q2`` as a contiguous sub-chain with a subset of its edges."""
    offsets = []
    edges2 = q2.edge_set()
    for off in range(q2.n - q1.n + 1):
        if q1.tables != q2.tables[off: off + q1.n]:
            continue
        if q1.edge_set(off) <= edges2:
            offsets.append(off)
    return offsets


def is_subquery(q1: JoinQuery, q2: JoinQuery) -> bool:
    return bool(subquery_offsets(q1, q2))


def clique_query(edge_table: str = "edges", n: int = 3,
                 src: str = "src", dst: str = "dst") -> JoinQuery:
    """Cyclic self-join finding directed closed walks of length ``n`` (3 or 4)."""
    if n not in (3, 4):
        raise DomainError(f"clique queries are defined for n in {{3, 4}}, got {n}")
    aliases = tuple(f"E{i + 1}" for i in range(n))
    edges = [JoinEdge(aliases[i], dst, aliases[i + 1], src) for i in range(n - 1)]
    edges.append(JoinEdge(aliases[-1], dst, aliases[0], src))
    return JoinQuery(aliases, tuple(edges), CYCLE, (edge_table,) * n)


def chain_query(tables: Sequence[str], attrs: Sequence[tuple[str, str]] | str) -> JoinQuery:
    """Chain over ``tables``; ``attrs[i]`` is the (left, right) attribute pair of edge ``i``.

    A single string joins every adjacent pair on that attribute name.
    """
    tables = tuple(tables)
    if isinstance(attrs, str):
        attrs = [(attrs, attrs)] * (len(tables) - 1)
    edges = tuple(JoinEdge(tables[i], a, tables[i + 1], b) for i, (a, b) in enumerate(attrs))
    return JoinQuery(tables, edges, CHAIN)
