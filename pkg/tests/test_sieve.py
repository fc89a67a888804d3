import numpy as np
import pytest

from oracles import brute_join, participating_values
from sievejoin.bloom import BloomFilter
from sievejoin.benchgen import SyntheticParams, gen_random_graph, synthetic_catalog, synthetic_query
from sievejoin.engine import nested_loop_join, sieve_join
from sievejoin.errors import StaleSieveError, TopologyError
from sievejoin.query import JoinEdge, JoinQuery, chain_query, clique_query, validate
from sievejoin.sieve import (BOTH, FilterRegistry, aliased, build_backward, build_forward, build_sieve,
                             export_pruned_tables, load_sieve, reuse_for, save_sieve)
from sievejoin.storage import Table, build_index


def single(**cols):
    return {k: Table(k, {"x": v}) for k, v in cols.items()}


def test_identical_relations_keep_everything():
    cat = single(R=range(1, 11), S=range(1, 11), T=range(1, 11))
    q = chain_query("RST", "x")
    s = build_backward(q, cat)
    for f in s.filters.values():
        assert f.contains_many(np.arange(1, 11)).all()
    assert sieve_join(q, s, cat)[0].cardinality == 10


def test_empty_tail_empties_filters():
    cat = single(R=[1, 2], S=[1, 2], T=[])
    q = chain_query("RST", "x")
    s = build_backward(q, cat)
    assert s.filters[1].set_bits == 0 and s.filters[0].set_bits == 0
    _, stats = sieve_join(q, s, cat)
    assert stats.intermediate_emitted == [0, 0]


def test_synthetic_first_filter_is_semijoin_plus_noise():
    cat = synthetic_catalog(SyntheticParams(10_000, 100, 1))
    q = synthetic_query()
    s = build_backward(q, cat)
    r = cat["R"].column("x")
    admitted = r[s.filters[0].contains_many(r)]
    truth = np.intersect1d(cat["S"].column("x"), cat["T"].column("x"))
    assert np.isin(truth, admitted).all()
    assert len(truth) == 100
    # false positives bounded: at most ~FPR share of the 9900 non-matching R values, plus slack
    assert len(admitted) - 100 < 0.03 * 9900


def test_build_backward_rejects_cycles():
    cat = {"edges": Table("edges", {"src": [1], "dst": [2]})}
    with pytest.raises(TopologyError):
        build_backward(clique_query(n=3), cat)


def test_backward_completeness_against_oracle():
    rng = np.random.default_rng(4)
    cat = {n: Table(n, {"a": rng.integers(0, 15, 40), "b": rng.integers(0, 15, 40)}) for n in "ABCD"}
    q = validate(chain_query("ABCD", [("b", "a"), ("b", "a"), ("b", "a")]), cat)
    s = build_sieve(q, cat, two_pass=True)
    parts = participating_values(q, cat)
    for pos, rows in enumerate(parts):
        cols = cat[q.tables[pos]].column_names
        for row in rows:
            vals = dict(zip(cols, row))
            if pos < q.n - 1:
                assert s.filters[pos].contains(vals[q.right_attr(pos)])
                assert s.forward[pos].contains(vals[q.right_attr(pos)])


def test_filter_admits_subset_of_raw_values():
    rng = np.random.default_rng(8)
    cat = {n: Table(n, {"x": rng.integers(0, 400, 300)}) for n in "RST"}
    q = chain_query("RST", "x")
    s = build_backward(q, cat)
    probe = np.arange(0, 400)
    for i in range(2):
        raw = set(cat["RST"[i + 1]].column("x").tolist())
        admitted = set(probe[s.filters[i].contains_many(probe)].tolist())
        # every admitted value outside the raw set must be a false positive: few of them
        assert len(admitted - raw) <= 0.05 * len(probe)


def test_forward_pass_prunes_with_small_head():
    rng = np.random.default_rng(1)
    cat = {"R": Table("R", {"x": [3, 5]}),
           "S": Table("S", {"x": rng.integers(0, 2000, 3000), "y": rng.integers(0, 2000, 3000)}),
           "T": Table("T", {"y": rng.integers(0, 2000, 3000)})}
    q = chain_query("RST", [("x", "x"), ("y", "y")])
    s = build_forward(build_backward(q, cat), q, cat)
    assert s.direction == BOTH
    unpruned = BloomFilter(s.forward[1].m, s.forward[1].k, s.forward[1].seed)
    unpruned.insert_many(np.unique(cat["S"].column("y")))
    assert s.forward[1].set_bits < unpruned.set_bits
    assert s.filter_bytes <= 2 * build_backward(q, cat).filter_bytes


def test_two_pass_on_identical_relations():
    cat = single(R=range(20), S=range(20), T=range(20))
    q = chain_query("RST", "x")
    s = build_sieve(q, cat, two_pass=True)
    for i in range(2):
        assert s.forward[i].contains_many(np.arange(20)).all()


def test_determinism():
    cat = synthetic_catalog(SyntheticParams(2000, 100, 2))
    a, b = build_sieve(synthetic_query(), cat, seed=3), build_sieve(synthetic_query(), cat, seed=3)
    for i in a.filters:
        assert np.array_equal(a.filters[i].bits, b.filters[i].bits)


def test_index_path_equals_scan_path():
    rng = np.random.default_rng(2)
    cat = {n: Table(n, {"a": rng.integers(0, 50, 200), "b": rng.integers(0, 50, 200)}) for n in "RST"}
    q = chain_query("RST", [("b", "a"), ("b", "a")])
    plain = build_backward(q, cat, use_index=False)
    for t in cat.values():
        build_index(t, "b")
    indexed = build_backward(q, cat, use_index=True)
    assert any(s.used_index for s in indexed.build_stats)
    for i in plain.filters:
        assert np.array_equal(plain.filters[i].bits, indexed.filters[i].bits)


# --- reuse ---------------------------------------------------------------------

def abc_catalog(seed=0):
    rng = np.random.default_rng(seed)
    return {n: Table(n, {"a": rng.integers(0, 30, 60), "d": rng.integers(0, 30, 60)}) for n in "RST"}


def test_reuse_cycle_regenerates_only_closing():
    cat = abc_catalog()
    chain = chain_query("RST", [("a", "a"), ("a", "a")])
    cycle = JoinQuery(("R", "S", "T"), chain.edges + (JoinEdge("T", "d", "R", "d"),), "cycle")
    reg = FilterRegistry()
    reg.register(build_backward(chain, cat))
    s, regen = reuse_for(cycle, reg, cat)
    assert regen == [2]
    assert sorted(st.edge for st in s.build_stats if st.reused) == [0, 1]
    assert sieve_join(cycle, s, cat)[0].sorted_rows() == brute_join(validate(cycle, cat), cat)


def test_reuse_suffix():
    cat = abc_catalog(1)
    reg = FilterRegistry()
    sub = build_backward(chain_query("ST", [("a", "a")]), cat)
    reg.register(sub)
    full = chain_query("RST", [("a", "a"), ("a", "a")])
    s, regen = reuse_for(full, reg, cat)
    assert regen == [0]
    assert s.filters[1] is sub.filters[0]
    fresh = build_backward(full, cat)
    assert sieve_join(full, s, cat)[0].sorted_rows() == sieve_join(full, fresh, cat)[0].sorted_rows()


def test_reuse_empty_registry_builds_all():
    cat = abc_catalog(2)
    full = chain_query("RST", [("a", "a"), ("a", "a")])
    s, regen = reuse_for(full, FilterRegistry(), cat)
    assert regen == [0, 1]
    fresh = build_backward(full, cat)
    for i in fresh.filters:
        assert np.array_equal(fresh.filters[i].bits, s.filters[i].bits)


def test_registry_drops_stale_entries():
    cat = abc_catalog(3)
    chain = chain_query("RST", [("a", "a"), ("a", "a")])
    reg = FilterRegistry()
    reg.register(build_backward(chain, cat))
    cat["S"].append_row([1, 1])
    assert reg.get(validate(chain, cat).key, cat) is None
    _, regen = reuse_for(chain, reg, cat)
    assert regen == [0, 1]


def test_clique_reuse_on_graph():
    cat = {"edges": gen_random_graph(30, 150, seed=5)}
    reg = FilterRegistry()
    for n in (3, 4):
        q = clique_query(n=n)
        reg.register(build_backward(q.chain(), cat))
        s, regen = reuse_for(q, reg, cat)
        assert regen == [n - 1]
        assert sieve_join(q, s, cat)[0].cardinality == nested_loop_join(q, cat).cardinality


# --- export ----------------------------------------------------------------------

def test_export_synthetic_counts():
    cat = synthetic_catalog(SyntheticParams(10_000, 100, 1))
    q = synthetic_query()
    s = build_backward(q, cat)
    pruned = export_pruned_tables(q, s, cat)
    assert [t.name for t in pruned] == ["R", "S", "T"]
    assert 100 <= pruned[0].row_count <= 105
    unrefined = export_pruned_tables(q, s, cat, refine_rounds=0)
    assert unrefined[0].row_count >= pruned[0].row_count


def test_export_without_pruning_keeps_originals():
    cat = single(R=range(10), S=range(10), T=range(10))
    q = chain_query("RST", "x")
    for t, orig in zip(export_pruned_tables(q, build_backward(q, cat), cat), "RST"):
        assert t.column("x").tolist() == cat[orig].column("x").tolist()


def test_export_join_equals_original_cycle():
    cat = {"edges": gen_random_graph(20, 80, seed=2)}
    q = clique_query(n=3)
    s = build_sieve(q, cat)
    pruned = export_pruned_tables(q, s, cat)
    pcat = {t.name: t for t in pruned}
    assert brute_join(validate(aliased(q), pcat), pcat) == brute_join(validate(q, cat), cat)


# --- persistence ------------------------------------------------------------------

def test_save_load_roundtrip(tmp_path):
    cat = abc_catalog(4)
    q = chain_query("RST", [("a", "a"), ("a", "a")])
    s = build_sieve(q, cat, two_pass=True, counting=True)
    save_sieve(s, tmp_path / "s")
    files = sorted(p.name for p in (tmp_path / "s").iterdir())
    assert files == ["backward_0.bf", "backward_1.bf", "forward_0.bf", "forward_1.bf", "manifest.json"]
    back = load_sieve(tmp_path / "s", cat)
    assert back.query_key == s.query_key and back.direction == BOTH and back.counting
    assert sieve_join(q, back, cat)[0].sorted_rows() == sieve_join(q, s, cat)[0].sorted_rows()


def test_load_detects_changed_tables(tmp_path):
    cat = abc_catalog(5)
    q = chain_query("RST", [("a", "a"), ("a", "a")])
    save_sieve(build_sieve(q, cat), tmp_path / "s")
    cat["T"].append_row([0, 0])
    with pytest.raises(StaleSieveError):
        load_sieve(tmp_path / "s", cat)
