import pytest
from hypothesis import given, settings, strategies as st

from oracles import brute_join
from sievejoin.errors import DomainError, SchemaError, StructureError
from sievejoin.query import (JoinEdge, JoinQuery, chain_query, clique_query, dump_query, is_subquery,
                             load_query, subquery_offsets, validate)
from sievejoin.storage import Table


@pytest.fixture
def rst():
    return {
        "R": Table("R", {"a": [1], "b": [2]}),
        "S": Table("S", {"b": [2], "c": [3]}),
        "T": Table("T", {"c": [3], "d": [1]}),
    }


def test_validate_chain(rst):
    q = JoinQuery(("R", "S", "T"), (JoinEdge.parse("R.b = S.b"), JoinEdge.parse("S.c = T.c")))
    v = validate(q, rst)
    assert v.validated and v.n == 3 and not v.is_cycle
    assert v.right_attr(0) == "b" and v.left_attr(1) == "b" and v.right_attr(1) == "c"


def test_validate_cycle(rst):
    q = JoinQuery(("R", "S", "T"), (JoinEdge.parse("R.b = S.b"), JoinEdge.parse("S.c = T.c"),
                                    JoinEdge.parse("T.d = R.a")), "cycle")
    v = validate(q, rst)
    assert v.is_cycle and v.closing_attrs() == ("d", "a")


def test_validate_normalises_edge_order(rst):
    q = JoinQuery(("R", "S", "T"), (JoinEdge.parse("T.c = S.c"), JoinEdge.parse("S.b = R.b")))
    v = validate(q, rst)
    assert [str(e) for e in v.edges] == ["R.b = S.b", "S.c = T.c"]


def test_validate_errors(rst):
    with pytest.raises(SchemaError):
        validate(JoinQuery(("R", "S"), (JoinEdge.parse("R.zz = S.b"),)), rst)
    with pytest.raises(SchemaError):
        validate(JoinQuery(("R", "X"), (JoinEdge.parse("R.b = X.b"),)), rst)
    with pytest.raises(StructureError):
        validate(JoinQuery(("R", "S", "T"), (JoinEdge.parse("R.b = S.b"),)), rst)  # disconnected
    with pytest.raises(StructureError):
        validate(JoinQuery(("R", "S", "T"), (JoinEdge.parse("R.b = S.b"), JoinEdge.parse("S.c = T.c")),
                           "cycle"), rst)  # topology mismatch
    with pytest.raises(StructureError):
        validate(JoinQuery(("R", "S", "T"), (JoinEdge.parse("R.a = T.d"), JoinEdge.parse("S.c = T.c"))),
                 rst)  # not a chain in the given order
    with pytest.raises(StructureError):
        JoinEdge.parse("R.b == S")


def test_key_alias_invariant(rst):
    a = validate(chain_query(("R", "S", "T"), [("b", "b"), ("c", "c")]), rst)
    b = JoinQuery(("x", "y", "z"), (JoinEdge("y", "c", "z", "c"), JoinEdge("y", "b", "x", "b")),
                  tables=("R", "S", "T"))
    assert a.key == validate(b, rst).key
    assert validate(a, rst).key == a.key


def test_key_distinguishes_attributes(rst):
    a = validate(JoinQuery(("R", "S"), (JoinEdge.parse("R.b = S.b"),)), rst)
    b = validate(JoinQuery(("R", "S"), (JoinEdge.parse("R.a = S.b"),)), rst)
    assert a.key != b.key


def test_is_subquery(rst):
    full = validate(chain_query(("R", "S", "T"), [("b", "b"), ("c", "c")]), rst)
    st_ = validate(chain_query(("S", "T"), [("c", "c")]), rst)
    assert is_subquery(st_, full)
    assert not is_subquery(full, st_)
    assert subquery_offsets(st_, full) == [1]
    cyc = validate(JoinQuery(full.relations, full.edges + (JoinEdge.parse("T.d = R.a"),), "cycle"), rst)
    assert is_subquery(full, cyc)
    assert is_subquery(full, full)


def test_clique_query_shape():
    q3, q4 = clique_query(n=3), clique_query(n=4)
    assert q3.n == 3 and len(q3.edges) == 3 and q3.is_cycle
    assert q4.n == 4 and len(q4.edges) == 4
    assert str(q3.edges[-1]) == "E3.dst = E1.src"
    with pytest.raises(DomainError):
        clique_query(n=5)


def test_clique_on_triangle():
    cat = {"edges": Table("edges", {"src": [1, 2, 3], "dst": [2, 3, 1]})}
    assert len(brute_join(validate(clique_query(n=3), cat), cat)) == 3


def test_query_file_roundtrip(tmp_path):
    q = clique_query("edges", 4)
    dump_query(q, tmp_path / "q.json")
    back = load_query(tmp_path / "q.json")
    assert back == q and back.tables == ("edges",) * 4


@settings(max_examples=50, deadline=None)
@given(st.permutations(range(4)), st.lists(st.booleans(), min_size=4, max_size=4))
def test_key_stable_under_edge_shuffles(order, flips):
    cat = {n: Table(n, {"a": [], "b": []}) for n in "ABCD"}
    base = JoinQuery(tuple("ABCD"), (JoinEdge("A", "a", "B", "b"), JoinEdge("B", "a", "C", "a"),
                                     JoinEdge("C", "b", "D", "a"), JoinEdge("D", "b", "A", "b")), "cycle")
    edges = [base.edges[i] for i in order]
    edges = [e.flipped() if f else e for e, f in zip(edges, flips)]
    shuffled = JoinQuery(base.relations, tuple(edges), "cycle")
    assert validate(shuffled, cat).key == validate(base, cat).key
    assert validate(shuffled, cat).edges == validate(base, cat).edges
