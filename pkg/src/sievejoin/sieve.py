"""Pruning phase: chained Bloom filters built backward along the join path.

Filter ``i`` (for chain edge ``i``) holds the edge values of relation
``i + 1`` restricted to rows that pass filter ``i + 1`` on their right edge,
so it summarises the whole suffix join ``R[i+1] ⋈ ... ⋈ R[n-1]``.  The last
relation is unconstrained.  Cyclic queries additionally carry a closing
filter at position ``n - 1`` over the first relation's closing attribute.

An optional forward pass mirrors this left to right (``forward`` filters,
over each relation's right-edge attribute, pruned by the upstream forward
filter).
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .bloom import AnyFilter, BloomFilter, CountingBloomFilter, load_filter
from .errors import SieveJoinError, StaleSieveError, TopologyError
from .query import JoinQuery, validate
from .storage import Table, distinct_values

log = logging.getLogger(__name__)

BACKWARD = "backward"
BOTH = "backward+forward"
DEFAULT_FPR = 0.01

_KIND_CODE = {"backward": 1, "closing": 2, "forward": 3, "refine": 4}


def filter_seed(seed: int, kind: str, edge: int, round_: int = 0) -> int:
    return (seed * 0x100000001B3 + _KIND_CODE[kind] * 0x9E3779B1 + edge * 7919 + round_ * 104729) & ((1 << 64) - 1)


@dataclass
class FilterBuildStats:
    kind: str  # backward | closing | forward
    edge: int
    rows_scanned: int
    values_inserted: int
    seconds: float
    m: int
    k: int
    used_index: bool = False
    reused: bool = False


@dataclass
class SieveSet:
    query: JoinQuery
    filters: dict[int, AnyFilter] = field(default_factory=dict)
    forward: dict[int, AnyFilter] = field(default_factory=dict)
    direction: str = BACKWARD
    build_stats: list[FilterBuildStats] = field(default_factory=list)
    table_versions: dict[str, int] = field(default_factory=dict)
    table_rows: dict[str, int] = field(default_factory=dict)
    fpr: float = DEFAULT_FPR
    seed: int = 0
    counting: bool = False
    # Exact logical membership per filter, filled lazily by the updates module.
    members: dict[tuple[str, int], set] = field(default_factory=dict, repr=False)

    @property
    def query_key(self) -> str:
        return self.query.key

    @property
    def filter_bytes(self) -> int:
        return sum(f.nbytes for f in self.filters.values()) + sum(f.nbytes for f in self.forward.values())

    @property
    def build_seconds(self) -> float:
        return sum(s.seconds for s in self.build_stats)

    def all_filters(self) -> Iterable[tuple[str, int, AnyFilter]]:
        n = self.query.n
        for i, f in sorted(self.filters.items()):
            yield ("closing" if self.query.is_cycle and i == n - 1 else "backward"), i, f
        for i, f in sorted(self.forward.items()):
            yield "forward", i, f

    def relation_mask(self, pos: int, table: Table) -> np.ndarray | None:
        """Rows of relation ``pos`` admitted by every adjacent filter, or None if unfiltered."""
        q = self.query
        n = q.n
        mask = None

        def narrow(f, attr):
            nonlocal mask
            hit = f.contains_many(table.column(attr))
            mask = hit if mask is None else mask & hit

        if pos < n - 1 and pos in self.filters:
            narrow(self.filters[pos], q.right_attr(pos))
        if pos >= 1 and (pos - 1) in self.forward:
            narrow(self.forward[pos - 1], q.left_attr(pos))
        if q.is_cycle and pos == n - 1 and (n - 1) in self.filters:
            narrow(self.filters[n - 1], q.closing_attrs()[0])
        return mask

    def is_stale(self, catalog: Mapping[str, Table]) -> bool:
        for name, version in self.table_versions.items():
            t = catalog.get(name)
            if t is None or t.version != version:
                return True
        return False


def resolve(query: JoinQuery, catalog: Mapping[str, Table]) -> tuple[JoinQuery, list[Table]]:
    if not query.validated:
        query = validate(query, catalog)
    return query, [catalog[t] for t in query.tables]


def _versions(query: JoinQuery, catalog) -> dict[str, int]:
    return {t: catalog[t].version for t in dict.fromkeys(query.tables)}


def _rows(query: JoinQuery, catalog) -> dict[str, int]:
    return {t: catalog[t].row_count for t in dict.fromkeys(query.tables)}


def _new_sieve(q: JoinQuery, catalog, fpr: float, seed: int, counting: bool) -> SieveSet:
    return SieveSet(q, fpr=fpr, seed=seed, counting=counting,
                    table_versions=_versions(q, catalog), table_rows=_rows(q, catalog))


def _new_filter(distinct: int, fpr: float, seed: int, counting: bool) -> AnyFilter:
    cls = CountingBloomFilter if counting else BloomFilter
    return cls.for_capacity(max(1, distinct), fpr, seed)


def _live(table: Table, mask: np.ndarray | None) -> np.ndarray | None:
    live = table.live_mask()
    if live is None:
        return mask
    return live if mask is None else mask & live


def _build_filter(table: Table, attr: str, gate: AnyFilter | None, gate_attr: str | None,
                  fpr: float, seed: int, counting: bool, use_index: bool,
                  kind: str, edge: int) -> tuple[AnyFilter, FilterBuildStats]:
    """Filter over ``table.attr`` for rows whose ``gate_attr`` passes ``gate``."""
    t0 = time.perf_counter()
    col = table.column(attr)
    used_index = False
    if gate is None:
        mask = _live(table, None)
        values = col if mask is None else col[mask]
        scanned = table.row_count
    elif use_index and gate_attr in table.indexes:
        # Probe the gate once per distinct key instead of once per row.
        index = table.indexes[gate_attr]
        keys = index.keys()
        passing = keys[gate.contains_many(keys)] if len(keys) else keys
        pos = [p for k in passing.tolist() for p in index.map[k]]
        pos = np.asarray(pos, dtype=np.int64)
        live = table.live_mask()
        if live is not None and len(pos):
            pos = pos[live[pos]]
        values = col[pos]
        scanned = len(keys)
        used_index = True
    else:
        mask = _live(table, gate.contains_many(table.column(gate_attr)))
        values = col[mask]
        scanned = table.row_count
    values = np.unique(values)
    f = _new_filter(distinct_values(table, attr).count, fpr, seed, counting)
    f.insert_many(values)
    f.freeze()
    stats = FilterBuildStats(kind, edge, scanned, len(values), time.perf_counter() - t0,
                             f.m, f.k, used_index)
    return f, stats


def _build_backward_edges(q: JoinQuery, rels: list[Table], sieve: SieveSet, edges: Iterable[int],
                          use_index: bool) -> None:
    n = q.n
    for i in edges:
        src = rels[i + 1]
        gate = sieve.filters[i + 1] if i + 1 < n - 1 else None
        f, st = _build_filter(src, q.left_attr(i + 1), gate, q.right_attr(i + 1),
                              sieve.fpr, filter_seed(sieve.seed, "backward", i), sieve.counting,
                              use_index, "backward", i)
        sieve.filters[i] = f
        sieve.build_stats.append(st)


def _build_closing(q: JoinQuery, rels: list[Table], sieve: SieveSet, use_index: bool) -> None:
    n = q.n
    first_close = q.closing_attrs()[1]
    gate = sieve.filters.get(0) if n >= 2 else None
    f, st = _build_filter(rels[0], first_close, gate, q.right_attr(0), sieve.fpr,
                          filter_seed(sieve.seed, "closing", n - 1), sieve.counting,
                          use_index, "closing", n - 1)
    sieve.filters[n - 1] = f
    sieve.build_stats.append(st)


def build_backward(query: JoinQuery, catalog: Mapping[str, Table], fpr: float = DEFAULT_FPR,
                   seed: int = 0, counting: bool = False, use_index: bool = True) -> SieveSet:
    """Run the backward pruning pass over a chain query."""
    q, rels = resolve(query, catalog)
    if q.is_cycle:
        raise TopologyError("build_backward handles chains; use reuse_for for cyclic queries")
    sieve = _new_sieve(q, catalog, fpr, seed, counting)
    _build_backward_edges(q, rels, sieve, range(q.n - 2, -1, -1), use_index)
    return sieve


def build_forward(sieve: SieveSet, query: JoinQuery, catalog: Mapping[str, Table],
                  use_index: bool = True) -> SieveSet:
    """Add the left-to-right pass; returns a new SieveSet sharing the backward filters."""
    q, rels = resolve(query, catalog)
    if q.key != sieve.query_key:
        raise SieveJoinError("sieve was built for a different query")
    out = replace(sieve, filters=dict(sieve.filters), forward={}, build_stats=list(sieve.build_stats),
                  members={}, direction=BOTH)
    for i in range(q.n - 1):
        gate = out.forward[i - 1] if i >= 1 else None
        f, st = _build_filter(rels[i], q.right_attr(i), gate, q.left_attr(i) if i >= 1 else None,
                              out.fpr, filter_seed(out.seed, "forward", i), out.counting,
                              use_index, "forward", i)
        out.forward[i] = f
        out.build_stats.append(st)
    return out


def build_sieve(query: JoinQuery, catalog: Mapping[str, Table], fpr: float = DEFAULT_FPR,
                seed: int = 0, counting: bool = False, two_pass: bool = False,
                use_index: bool = True) -> SieveSet:
    """Full pruning phase for chains and cycles (cycles get a fresh closing filter)."""
    q, rels = resolve(query, catalog)
    sieve = _new_sieve(q, catalog, fpr, seed, counting)
    _build_backward_edges(q, rels, sieve, range(q.n - 2, -1, -1), use_index)
    if q.is_cycle:
        _build_closing(q, rels, sieve, use_index)
    if two_pass:
        sieve = build_forward(sieve, q, catalog, use_index)
    return sieve


class FilterRegistry:
    """Pre-built SieveSets keyed by query template, for reuse across queries."""

    def __init__(self):
        self.entries: dict[str, SieveSet] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def register(self, sieve: SieveSet) -> None:
        self.entries[sieve.query_key] = sieve

    def get(self, key: str, catalog: Mapping[str, Table]) -> SieveSet | None:
        s = self.entries.get(key)
        if s is not None and s.is_stale(catalog):
            log.info("dropping stale sieve %s", key)
            del self.entries[key]
            return None
        return s

    def valid_entries(self, catalog: Mapping[str, Table]) -> list[SieveSet]:
        for key in [k for k, s in self.entries.items() if s.is_stale(catalog)]:
            log.info("dropping stale sieve %s", key)
            del self.entries[key]
        return list(self.entries.values())

    def invalidate_table(self, table_name: str) -> int:
        """Drop every entry depending on ``table_name``; returns how many."""
        doomed = [k for k, s in self.entries.items() if table_name in s.table_versions]
        for k in doomed:
            del self.entries[k]
        return len(doomed)


def _suffix_match(entry_chain: JoinQuery, q: JoinQuery) -> int | None:
    """Offset at which ``entry_chain``'s filters can stand in for ``q``'s, if any.

    Backward filter ``j`` depends on every relation after ``j``, so only a
    registered chain that ends where ``q``'s chain ends is reusable verbatim.
    """
    off = q.n - entry_chain.n
    if off < 0 or entry_chain.n < 2:
        return None
    if entry_chain.tables != q.tables[off:]:
        return None
    for j, e in enumerate(entry_chain.chain_edges):
        mine = q.edges[off + j]
        if (e.left_attribute, e.right_attribute) != (mine.left_attribute, mine.right_attribute):
            return None
    return off


def reuse_for(query: JoinQuery, registry: FilterRegistry, catalog: Mapping[str, Table],
              fpr: float = DEFAULT_FPR, seed: int = 0, counting: bool = False,
              use_index: bool = True) -> tuple[SieveSet, list[int]]:
    """Assemble a SieveSet for ``query`` from registered filters where possible.

    Returns the sieve and the edge positions whose filters were built now.
    A cyclic query always regenerates its closing filter unless the identical
    cyclic template is registered.
    """
    q, rels = resolve(query, catalog)
    n = q.n
    exact = registry.get(q.key, catalog)
    if exact is not None and exact.counting == counting:
        return exact, []

    best, best_off = None, None
    for entry in registry.valid_entries(catalog):
        if entry.counting != counting:
            continue
        off = _suffix_match(entry.query.chain(), q)
        if off is not None and (best is None or off < best_off):
            best, best_off = entry, off

    sieve = _new_sieve(q, catalog, fpr, seed, counting)
    if best is None:
        log.info("no reusable filters for %s; building from scratch", q.key)
        todo = list(range(n - 2, -1, -1))
    else:
        for j in range(best.query.n - 1):
            sieve.filters[best_off + j] = best.filters[j]
            st = next((s for s in best.build_stats if s.kind == "backward" and s.edge == j), None)
            if st is not None:
                sieve.build_stats.append(replace(st, edge=best_off + j, reused=True, seconds=0.0))
        if best_off == 0 and best.forward and best.query.n == n:
            sieve.forward = dict(best.forward)
            sieve.direction = BOTH
        todo = list(range(best_off - 1, -1, -1))
    _build_backward_edges(q, rels, sieve, todo, use_index)
    regenerated = sorted(todo)
    if q.is_cycle:
        _build_closing(q, rels, sieve, use_index)
        regenerated.append(n - 1)
    return sieve, regenerated


def _semijoin_mask(src: Table, src_attr: str, src_mask: np.ndarray, dst: Table, dst_attr: str,
                   fpr: float, seed: int) -> np.ndarray:
    f = BloomFilter.for_capacity(distinct_values(src, src_attr).count, fpr, seed)
    f.insert_many(np.unique(src.column(src_attr)[src_mask]))
    return f.contains_many(dst.column(dst_attr))


def pruned_row_masks(query: JoinQuery, sieve: SieveSet, catalog: Mapping[str, Table],
                     refine_rounds: int = 1) -> list[np.ndarray]:
    """Per-relation masks of rows that survive the sieve and ``refine_rounds`` extra passes.

    Each refinement round is one forward and one backward sweep of Bloom
    semijoins over the surviving rows.  Later filters hold far fewer values
    than they are sized for, so false positives that leaked through the
    unconstrained end filters are removed.
    """
    q, rels = resolve(query, catalog)
    if q.key != sieve.query_key:
        raise SieveJoinError("sieve was built for a different query")
    n = q.n
    masks = []
    for p, t in enumerate(rels):
        m = sieve.relation_mask(p, t)
        m = _live(t, m)
        masks.append(np.ones(t.row_count, dtype=bool) if m is None else m.copy())
    close = q.closing_attrs()
    for rnd in range(refine_rounds):
        before = [int(m.sum()) for m in masks]
        for i in range(n - 1):
            masks[i + 1] &= _semijoin_mask(rels[i], q.right_attr(i), masks[i], rels[i + 1],
                                           q.left_attr(i + 1), sieve.fpr,
                                           filter_seed(sieve.seed, "refine", i, 2 * rnd + 1))
        if close:
            masks[0] &= _semijoin_mask(rels[n - 1], close[0], masks[n - 1], rels[0], close[1],
                                       sieve.fpr, filter_seed(sieve.seed, "refine", n - 1, 2 * rnd + 1))
            masks[n - 1] &= _semijoin_mask(rels[0], close[1], masks[0], rels[n - 1], close[0],
                                           sieve.fpr, filter_seed(sieve.seed, "refine", n - 1, 2 * rnd + 2))
        for i in range(n - 2, -1, -1):
            masks[i] &= _semijoin_mask(rels[i + 1], q.left_attr(i + 1), masks[i + 1], rels[i],
                                       q.right_attr(i), sieve.fpr,
                                       filter_seed(sieve.seed, "refine", i, 2 * rnd + 2))
        if [int(m.sum()) for m in masks] == before:
            break
    return masks


def export_pruned_tables(query: JoinQuery, sieve: SieveSet, catalog: Mapping[str, Table],
                         refine_rounds: int = 1) -> list[Table]:
    """Materialise, per relation, only the rows admitted by the sieve.

    Tables come back in relation order and are named after the relation
    alias, so self-joins yield one pruned copy per alias.  Feed them to any
    join engine together with ``aliased(query)``.
    """
    q, rels = resolve(query, catalog)
    masks = pruned_row_masks(q, sieve, catalog, refine_rounds)
    return [t.take(np.flatnonzero(m), name=alias) for t, m, alias in zip(rels, masks, q.relations)]


def aliased(query: JoinQuery) -> JoinQuery:
    """Same query with every relation bound to a table named after its alias."""
    return replace(query, tables=query.relations, validated=False)


# --- persistence ---------------------------------------------------------

MANIFEST = "manifest.json"


def save_sieve(sieve: SieveSet, directory: str | os.PathLike) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for kind, edge, f in sieve.all_filters():
        fname = f"{kind}_{edge}.bf"
        f.save(out / fname)
        entries.append({"kind": kind, "edge": edge, "file": fname, "m": f.m, "k": f.k,
                        "seed": f.seed, "n_inserted": f.n_inserted, "bytes": f.nbytes})
    manifest = {
        "query_key": sieve.query_key,
        "query": sieve.query.to_dict(),
        "direction": sieve.direction,
        "fpr": sieve.fpr,
        "seed": sieve.seed,
        "counting": sieve.counting,
        "table_versions": sieve.table_versions,
        "table_rows": sieve.table_rows,
        "filters": entries,
        "build_stats": [vars(s) for s in sieve.build_stats],
    }
    with open(out / MANIFEST, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return out


def load_sieve(directory: str | os.PathLike, catalog: Mapping[str, Table] | None = None) -> SieveSet:
    """Read a persisted SieveSet.

    With ``catalog`` the query is validated against it and the recorded row
    counts must match; table versions are then taken from the catalog.
    """
    d = Path(directory)
    with open(d / MANIFEST, encoding="utf-8") as fh:
        manifest = json.load(fh)
    q = JoinQuery.from_dict(manifest["query"])
    versions = dict(manifest["table_versions"])
    rows = dict(manifest.get("table_rows", {}))
    if catalog is not None:
        q = validate(q, catalog)
        for name, count in rows.items():
            if catalog[name].row_count != count:
                raise StaleSieveError(
                    f"table {name!r} has {catalog[name].row_count} rows; sieve was built on {count}"
                )
        # Versions are per-process counters; rebind them to the loaded catalog.
        versions = _versions(q, catalog)
    else:
        q = replace(q, validated=True)
    if q.key != manifest["query_key"]:
        raise SieveJoinError("sieve manifest query does not match its key")
    sieve = SieveSet(q, direction=manifest["direction"], fpr=manifest["fpr"], seed=manifest["seed"],
                     counting=manifest["counting"], table_versions=versions, table_rows=rows)
    for e in manifest["filters"]:
        f = load_filter(d / e["file"])
        if (f.m, f.k, f.seed) != (e["m"], e["k"], e["seed"]):
            raise SieveJoinError(f"filter file {e['file']} does not match the manifest")
        f.freeze()
        target = sieve.forward if e["kind"] == "forward" else sieve.filters
        target[e["edge"]] = f
    sieve.build_stats = [FilterBuildStats(**s) for s in manifest.get("build_stats", [])]
    return sieve


def check_fresh(sieve: SieveSet, catalog: Mapping[str, Table]) -> None:
    if sieve.is_stale(catalog):
        raise StaleSieveError(f"sieve {sieve.query_key} was built against other table versions")
