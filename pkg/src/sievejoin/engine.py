"""Enumeration phase and baseline join algorithms.

Every engine runs the same fixed left-deep plan in query order: relation 0
is scanned, then step ``j`` joins the running result with relation
``j + 1`` through a hash table built on relation ``j + 1``.  Cycles run as
the chain plus a final selection on the closing edge.

``ExecStats.intermediate_emitted[j]`` is the number of tuples produced by
step ``j``.  For the sieve engine, ``pruned_by_filter[j]`` is the number of
step-``j`` tuples of the unfiltered plan that were never produced because a
filter rejected one of their rows, so that per step
``pruned_by_filter + intermediate_emitted`` equals the hash join's count.
``filter_rejections[j]`` counts only the probe hits discarded at step ``j``
itself.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .bloom import (BloomFilter, BloomjoinCardinalityInputs, estimate_bloomjoin_cardinality,
                    size_for_target)
from .errors import ContractError, TopologyError
from .query import JoinQuery
from .sieve import SieveSet, resolve
from .storage import Table, distinct_values


@dataclass
class ExecStats:
    engine: str
    intermediate_emitted: list[int] = field(default_factory=list)
    pruned_by_filter: list[int] = field(default_factory=list)
    filter_rejections: list[int] = field(default_factory=list)
    output_cardinality: int = 0
    phase_timings: dict[str, float] = field(
        default_factory=lambda: {"build": 0.0, "prune": 0.0, "enumerate": 0.0}
    )
    filter_bytes: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def total_intermediate(self) -> int:
        return int(sum(self.intermediate_emitted))

    @property
    def total_pruned(self) -> int:
        return int(sum(self.pruned_by_filter))

    def to_record(self) -> dict:
        rec = {
            "engine": self.engine,
            "cardinality": self.output_cardinality,
            "intermediate_total": self.total_intermediate,
            "intermediate_per_step": list(map(int, self.intermediate_emitted)),
            "pruned_total": self.total_pruned,
            "pruned_per_step": list(map(int, self.pruned_by_filter)),
            "filter_rejections": list(map(int, self.filter_rejections)),
            "filter_bytes": self.filter_bytes,
        }
        for phase, secs in self.phase_timings.items():
            rec[f"{phase}_us"] = round(secs * 1e6, 1)
        rec.update(self.extra)
        return rec


@dataclass
class ResultSet:
    relations: tuple[str, ...]
    tables: list[Table]
    cardinality: int
    positions: dict[str, np.ndarray] | None = None

    @property
    def count_only(self) -> bool:
        return self.positions is None

    @property
    def schema(self) -> list[str]:
        return [f"{a}.{c}" for a, t in zip(self.relations, self.tables) for c in t.column_names]

    def rows(self) -> np.ndarray:
        if self.positions is None:
            raise ValueError("result was computed in count-only mode")
        cols = [t.column(c)[self.positions[a]]
                for a, t in zip(self.relations, self.tables) for c in t.column_names]
        if not cols:
            return np.empty((self.cardinality, 0), dtype=np.int64)
        return np.column_stack(cols) if self.cardinality else np.empty((0, len(cols)), dtype=np.int64)

    def sorted_rows(self) -> list[tuple[int, ...]]:
        return sorted(map(tuple, self.rows().tolist()))

    def position_tuples(self) -> list[tuple[int, ...]]:
        """Sorted tuples of row positions, one entry per relation."""
        if self.positions is None:
            raise ValueError("result was computed in count-only mode")
        if not self.cardinality:
            return []
        stacked = np.column_stack([self.positions[a] for a in self.relations])
        return sorted(map(tuple, stacked.tolist()))


class _HashTable:
    """Build side of one binary join: key -> slot -> contiguous run of row positions."""

    def __init__(self, keys: np.ndarray, positions: np.ndarray):
        order = np.argsort(keys, kind="stable")
        sorted_keys = keys[order]
        self.payload = positions[order]
        uniq, self.starts, self.counts = np.unique(sorted_keys, return_index=True, return_counts=True)
        self.slot = dict(zip(uniq.tolist(), range(len(uniq))))
        self.row_slot = np.repeat(np.arange(len(uniq), dtype=np.int64), self.counts)

    def lookup(self, probe_keys: np.ndarray) -> np.ndarray:
        """Slot per probe key, -1 on a miss."""
        if not len(probe_keys):
            return np.zeros(0, dtype=np.int64)
        uk, inv = np.unique(probe_keys, return_inverse=True)
        get = self.slot.get
        slots = np.fromiter((get(k, -1) for k in uk.tolist()), dtype=np.int64, count=len(uk))
        return slots[inv.reshape(-1)]

    def match_counts(self, probe_keys: np.ndarray) -> np.ndarray:
        slots = self.lookup(probe_keys)
        return np.where(slots >= 0, self.counts[np.maximum(slots, 0)] if len(self.counts) else 0, 0)

    def expand(self, probe_keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """All (probe index, build position) pairs with equal keys."""
        slots = self.lookup(probe_keys)
        hit = slots >= 0
        if not hit.any():
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty
        safe = np.where(hit, slots, 0)
        cnt = np.where(hit, self.counts[safe], 0)
        total = int(cnt.sum())
        probe_idx = np.repeat(np.arange(len(probe_keys), dtype=np.int64), cnt)
        first = np.repeat(np.where(hit, self.starts[safe], 0), cnt)
        within = np.arange(total, dtype=np.int64) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        return probe_idx, self.payload[first + within]

    def slot_weights(self, probe_keys: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """Weight arriving at every build row (aligned with ``payload``)."""
        slots = self.lookup(probe_keys)
        hit = slots >= 0
        per_slot = np.bincount(slots[hit], weights=weights[hit], minlength=len(self.counts))
        return np.rint(per_slot).astype(np.int64)[self.row_slot]


def _build_rows(table: Table, mask: np.ndarray | None) -> np.ndarray:
    live = table.live_mask()
    if mask is not None:
        live = mask if live is None else live & mask
    return np.arange(table.row_count, dtype=np.int64) if live is None else np.flatnonzero(live)


def _expand_parallel(ht: _HashTable, probe_keys: np.ndarray, threads: int):
    if threads <= 1 or len(probe_keys) < 2 * threads:
        return ht.expand(probe_keys)
    bounds = np.linspace(0, len(probe_keys), threads + 1).astype(int)
    chunks = [(bounds[i], probe_keys[bounds[i]: bounds[i + 1]]) for i in range(threads)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda c: ht.expand(c[1]), chunks))
    probe_idx = np.concatenate([p + off for (off, _), (p, _) in zip(chunks, parts)])
    build_pos = np.concatenate([b for _, b in parts])
    return probe_idx, build_pos


def _memo_table(cache: dict, table: Table, attr: str, rows: np.ndarray, key) -> _HashTable:
    ht = cache.get(key)
    if ht is None:
        ht = _HashTable(table.column(attr)[rows], rows)
        cache[key] = ht
    return ht


def _pipeline(q: JoinQuery, rels: list[Table], masks: list[np.ndarray | None],
              count_only: bool, threads: int, stats: ExecStats,
              count_rejections: bool = False) -> tuple[int, dict | None]:
    """Run the left-deep plan; fills per-step counters in ``stats``."""
    n = q.n
    close = q.closing_attrs()
    timings = stats.phase_timings
    cache: dict = {}
    build_secs = 0.0

    rows0 = _build_rows(rels[0], masks[0])
    t_enum = time.perf_counter()
    if count_only:
        # Factorised state: (row of the current relation, closing value of relation 0) -> weight.
        cur_rows = rows0
        weights = np.ones(len(rows0), dtype=np.int64)
        tag = rels[0].column(close[1])[rows0] if close else None
    else:
        frontier = {0: rows0}
    for j in range(n - 1):
        t0 = time.perf_counter()
        build_rows = _build_rows(rels[j + 1], masks[j + 1])
        ht = _memo_table(cache, rels[j + 1], q.left_attr(j + 1), build_rows, (j + 1, "kept"))
        build_secs += time.perf_counter() - t0
        right = rels[j].column(q.right_attr(j))
        if count_only:
            probe_keys = right[cur_rows]
            if tag is None:
                # Aggregate per key, then hand each build row the weight of its key.
                w = ht.slot_weights(probe_keys, weights)
                keep = w > 0
                cur_rows, weights = ht.payload[keep], w[keep]
                emitted = int(weights.sum())
            else:
                pairs = np.column_stack([tag, probe_keys])
                uniq, inv = np.unique(pairs, axis=0, return_inverse=True) if len(pairs) else (pairs, np.zeros(0, int))
                agg = np.rint(np.bincount(inv.reshape(-1), weights=weights, minlength=len(uniq))).astype(np.int64)
                pidx, bpos = ht.expand(uniq[:, 1] if len(uniq) else probe_keys[:0])
                tag, cur_rows, weights = uniq[pidx, 0] if len(uniq) else tag[:0], bpos, agg[pidx]
                emitted = int(weights.sum())
        else:
            probe_keys = right[frontier[j]]
            pidx, bpos = _expand_parallel(ht, probe_keys, threads)
            frontier = {p: a[pidx] for p, a in frontier.items()}
            frontier[j + 1] = bpos
            emitted = len(bpos)
            if count_rejections:
                stats.filter_rejections.append(
                    _rejected_hits(cache, rels[j + 1], q.left_attr(j + 1), masks[j + 1], j,
                                   probe_keys, None)
                )
        stats.intermediate_emitted.append(emitted)

    if count_only:
        if close:
            last = rels[n - 1].column(close[0])[cur_rows]
            total = int(weights[last == tag].sum())
        else:
            total = int(weights.sum())
        result = None
    else:
        if close:
            keep = rels[n - 1].column(close[0])[frontier[n - 1]] == rels[0].column(close[1])[frontier[0]]
            frontier = {p: a[keep] for p, a in frontier.items()}
        total = len(frontier[0])
        result = {q.relations[p]: a for p, a in frontier.items()}
    timings["build"] += build_secs
    timings["enumerate"] += time.perf_counter() - t_enum - build_secs
    return total, result


def _rejected_hits(cache, table: Table, attr: str, mask, j, probe_keys, weights) -> int:
    """Probe hits that matched a build row the filters had rejected."""
    if mask is None:
        return 0
    rejected = _build_rows(table, ~mask)
    if not len(rejected):
        return 0
    ht = _memo_table(cache, table, attr, rejected, (j + 1, "rejected"))
    if weights is None:
        return int(ht.match_counts(probe_keys).sum())
    slots = ht.lookup(probe_keys)
    hit = slots >= 0
    return int((ht.counts[slots[hit]] * weights[hit]).sum())


def chain_step_counts(q: JoinQuery, rels: list[Table], masks: Sequence[np.ndarray | None] | None = None) -> list[int]:
    """Tuples produced by each chain step, by weight propagation (no materialisation)."""
    n = q.n
    masks = masks or [None] * n
    rows = _build_rows(rels[0], masks[0])
    weights = np.ones(len(rows), dtype=np.int64)
    counts = []
    for j in range(n - 1):
        build = _build_rows(rels[j + 1], masks[j + 1])
        ht = _HashTable(rels[j + 1].column(q.left_attr(j + 1))[build], build)
        w = ht.slot_weights(rels[j].column(q.right_attr(j))[rows], weights)
        keep = w > 0
        rows, weights = ht.payload[keep], w[keep]
        counts.append(int(weights.sum()))
    return counts


def _result(q: JoinQuery, rels: list[Table], total: int, positions) -> ResultSet:
    return ResultSet(q.relations, rels, total, positions)


def hash_join(query: JoinQuery, catalog: Mapping[str, Table], count_only: bool = False,
              threads: int = 1) -> tuple[ResultSet, ExecStats]:
    """Left-deep pipeline of binary hash joins without any filter."""
    q, rels = resolve(query, catalog)
    stats = ExecStats("hash")
    total, positions = _pipeline(q, rels, [None] * q.n, count_only, threads, stats)
    stats.pruned_by_filter = [0] * len(stats.intermediate_emitted)
    stats.filter_rejections = [0] * len(stats.intermediate_emitted)
    stats.output_cardinality = total
    return _result(q, rels, total, positions), stats


def sieve_masks(sieve: SieveSet, q: JoinQuery, rels: list[Table]) -> list[np.ndarray | None]:
    return [sieve.relation_mask(p, t) for p, t in enumerate(rels)]


def sieve_join(query: JoinQuery, sieve: SieveSet, catalog: Mapping[str, Table],
               count_only: bool = False, threads: int = 1) -> tuple[ResultSet, ExecStats]:
    """Hash-join pipeline that drops rows rejected by the sieve before they join.

    Filters are applied while loading each hash table (and on the scan of
    relation 0).  The closing edge of a cycle is screened by its filter and
    then checked exactly, so false positives never reach the result.
    """
    q, rels = resolve(query, catalog)
    if sieve.query_key != q.key:
        raise ContractError(
            f"sieve was built for {sieve.query_key!r}, not for {q.key!r}"
        )
    stats = ExecStats("sieve", filter_bytes=sieve.filter_bytes)
    t0 = time.perf_counter()
    masks = sieve_masks(sieve, q, rels)
    stats.phase_timings["prune"] = time.perf_counter() - t0
    stats.extra["scan_rejections"] = 0 if masks[0] is None else int(
        (~masks[0] & (rels[0].live_mask() if rels[0].live_mask() is not None else True)).sum()
    )
    total, positions = _pipeline(q, rels, masks, count_only, threads, stats,
                                 count_rejections=not count_only)
    if count_only:
        stats.filter_rejections = _count_only_rejections(q, rels, masks)
    baseline = chain_step_counts(q, rels)
    stats.pruned_by_filter = [b - e for b, e in zip(baseline, stats.intermediate_emitted)]
    stats.output_cardinality = total
    return _result(q, rels, total, positions), stats


def _count_only_rejections(q: JoinQuery, rels: list[Table], masks) -> list[int]:
    """Direct rejections per step when the running result is only weighted, not materialised."""
    n = q.n
    rows = _build_rows(rels[0], masks[0])
    weights = np.ones(len(rows), dtype=np.int64)
    out = []
    for j in range(n - 1):
        probe = rels[j].column(q.right_attr(j))[rows]
        attr = q.left_attr(j + 1)
        out.append(_rejected_hits({}, rels[j + 1], attr, masks[j + 1], j, probe, weights))
        build = _build_rows(rels[j + 1], masks[j + 1])
        ht = _HashTable(rels[j + 1].column(attr)[build], build)
        w = ht.slot_weights(probe, weights)
        keep = w > 0
        rows, weights = ht.payload[keep], w[keep]
    return out


def nested_loop_join(query: JoinQuery, catalog: Mapping[str, Table]) -> ResultSet:
    """Reference oracle: tuple-at-a-time nested loops checking every bound edge."""
    q, rels = resolve(query, catalog)
    n = q.n
    live = [t.live_positions() for t in rels]
    cols = [{c: t.column(c).tolist() for c in t.column_names} for t in rels]
    tuples: list[tuple[int, ...]] = [(int(r),) for r in live[0]]
    for p in range(1, n):
        checks = []
        for e in q.edges:
            a, b = q.relations.index(e.left_table), q.relations.index(e.right_table)
            if a == p and b < p:
                checks.append((b, e.right_attribute, e.left_attribute))
            elif b == p and a < p:
                checks.append((a, e.left_attribute, e.right_attribute))
        inner_rows = live[p]
        inner_cols = {c: rels[p].column(c)[inner_rows] for c in rels[p].column_names}
        grown = []
        for t in tuples:
            ok = np.ones(len(inner_rows), dtype=bool)
            for other, other_attr, my_attr in checks:
                ok &= inner_cols[my_attr] == cols[other][other_attr][t[other]]
            for r in inner_rows[ok].tolist():
                grown.append(t + (r,))
        tuples = grown
    if tuples:
        arr = np.asarray(tuples, dtype=np.int64)
        positions = {a: arr[:, i] for i, a in enumerate(q.relations)}
    else:
        positions = {a: np.zeros(0, dtype=np.int64) for a in q.relations}
    return ResultSet(q.relations, rels, len(tuples), positions)


def bloomjoin_two_way(left: tuple[Table, str], right: tuple[Table, str],
                      fpr: float = 0.01, m: int | None = None, k: int | None = None,
                      seed: int = 0, count_only: bool = False,
                      aliases: tuple[str, str] | None = None) -> tuple[ResultSet, ExecStats]:
    """Classic two-way Bloomjoin of ``left`` (S) and ``right`` (T) on one attribute each.

    1. build a filter over S's join attribute;
    2. (ship it to T: a no-op in memory);
    3. keep the T tuples the filter admits, the stream C1';
    4. hash-join C1' back to S.

    ``extra`` reports the observed stream size next to the estimator's
    prediction (which assumes one hash function).
    """
    (S, s_attr), (T, t_attr) = left, right
    aliases = aliases or (S.name, T.name if T.name != S.name else T.name + "_2")
    stats = ExecStats("bloomjoin2")
    t0 = time.perf_counter()
    s_rows = _build_rows(S, None)
    t_rows = _build_rows(T, None)
    s_vals = S.column(s_attr)[s_rows]
    d_s = distinct_values(S, s_attr).count
    if m is None or k is None:
        m_, k_ = size_for_target(max(1, d_s), fpr)
        m, k = m or m_, k or k_
    bf = BloomFilter(m, k, seed)
    bf.insert_many(np.unique(s_vals))
    bf.freeze()
    stats.phase_timings["build"] = time.perf_counter() - t0

    t1 = time.perf_counter()
    t_vals = T.column(t_attr)[t_rows]
    passing = bf.contains_many(t_vals)
    stream_rows = t_rows[passing]
    stats.phase_timings["prune"] = time.perf_counter() - t1

    t2 = time.perf_counter()
    ht = _HashTable(s_vals, s_rows)
    stream_keys = T.column(t_attr)[stream_rows]
    if count_only:
        total = int(ht.match_counts(stream_keys).sum())
        positions = None
    else:
        pidx, spos = ht.expand(stream_keys)
        total = len(spos)
        positions = {aliases[0]: spos, aliases[1]: stream_rows[pidx]}
    stats.phase_timings["enumerate"] = time.perf_counter() - t2

    semijoin = int(np.isin(t_vals, s_vals).sum())
    d_t = distinct_values(T, t_attr).count
    estimate = None
    if len(t_rows):
        estimate = estimate_bloomjoin_cardinality(
            BloomjoinCardinalityInputs(semijoin, len(t_rows), d_t, d_s, m)
        )
    stats.intermediate_emitted = [total]
    stats.pruned_by_filter = [0]
    stats.filter_rejections = [int((~passing).sum())]
    stats.output_cardinality = total
    stats.filter_bytes = bf.nbytes
    stats.extra.update({
        "stream_size": int(len(stream_rows)),
        "estimated_stream_size": estimate,
        "semijoin_cardinality": semijoin,
        "C_T": int(len(t_rows)), "D_T": d_t, "D_S": d_s, "F": m, "k": k,
        "bits_set": bf.set_bits,
    })
    return ResultSet(aliases, [S, T], total, positions), stats


def bloomjoin_query(query: JoinQuery, catalog: Mapping[str, Table], **kw) -> tuple[ResultSet, ExecStats]:
    """Run a single-edge chain query through ``bloomjoin_two_way``."""
    q, rels = resolve(query, catalog)
    if q.n != 2 or q.is_cycle:
        raise TopologyError("the two-way Bloomjoin needs a chain of exactly two relations")
    e = q.edges[0]
    return bloomjoin_two_way((rels[0], e.left_attribute), (rels[1], e.right_attribute),
                             aliases=q.relations, **kw)


ENGINES = ("nested", "hash", "sieve", "bloomjoin2")
