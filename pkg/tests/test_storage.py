import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acdc.catalog import CATEGORICAL, CONTINUOUS, RelationSchema
from acdc.errors import MissingColumn, ParseError
from acdc.storage import (CategoryDictionary, Range, intersect_values, load_relation,
                          make_relation, narrow_range)

from instances import F1_ROWS

KINDS = {"A": CONTINUOUS, "B": CONTINUOUS, "C": CONTINUOUS, "D": CONTINUOUS, "E": CONTINUOUS}
R = RelationSchema("R", ("A", "B", "C"))
S = RelationSchema("S", ("B", "D"))
T = RelationSchema("T", ("A", "E"))


def rel(schema, rows=None, kinds=KINDS, order="ABCDE"):
    rows = F1_ROWS[schema.name] if rows is None else rows
    return make_relation(schema, rows, kinds, CategoryDictionary(), order)


def test_load_small_relation():
    s = load_relation(io.StringIO("D,B\n5.0,2\n4.0,1\n"), S, CategoryDictionary(), KINDS, "ABCDE")
    assert s.row_count == 2
    assert s.columns["B"].tolist() == [1.0, 2.0]
    assert s.columns["D"].tolist() == [4.0, 5.0]
    assert s.columns["D"].dtype == np.float64


def test_non_numeric_continuous():
    with pytest.raises(ParseError):
        load_relation(io.StringIO("B,D\n1,x\n"), S, CategoryDictionary(), KINDS)


def test_missing_column():
    with pytest.raises(MissingColumn):
        load_relation(io.StringIO("B,Q\n1,2\n"), S, CategoryDictionary(), KINDS)


def test_empty_body():
    s = load_relation(io.StringIO("B,D\n"), S, CategoryDictionary(), KINDS)
    assert s.row_count == 0
    assert s.full_range().empty


def test_custom_delimiter(tmp_path):
    path = tmp_path / "s.tsv"
    path.write_text("B\tD\n2\t5\n1\t4\n")
    s = load_relation(path, S, CategoryDictionary(), KINDS, "ABCDE", delimiter="\t")
    assert s.rows() == [(1.0, 4.0), (2.0, 5.0)]


def test_categorical_interning_first_seen():
    d = CategoryDictionary()
    kinds = {"city": CATEGORICAL, "y": CONTINUOUS}
    r = make_relation(RelationSchema("X", ("city", "y")),
                      [("paris", 1), ("lyon", 2), ("paris", 3)], kinds, d)
    assert d.labels("city") == ["paris", "lyon"]
    assert d.lookup("city", "lyon") == 1
    assert d.label("city", 0) == "paris"
    assert r.columns["city"].dtype == np.int64
    assert d.size("city") == 2


def test_duplicate_tuples_collapse():
    r = rel(S, [(1, 4), (1, 4), (2, 5)])
    assert r.row_count == 2


def test_sorted_by_preorder_key():
    r = make_relation(R, [(2, 2, 1), (1, 2, 3), (1, 1, 2)], KINDS, CategoryDictionary(),
                      ["C", "B", "A"])
    assert r.sort_key == ("C", "B", "A")
    assert r.columns["C"].tolist() == [1.0, 2.0, 3.0]


def test_narrow_range():
    r = rel(R)
    a1 = narrow_range(r.full_range(), "A", 1)
    assert (a1.begin, a1.end) == (0, 2)
    a3 = narrow_range(r.full_range(), "A", 3)
    assert a3.empty and len(a3) == 0
    b2 = narrow_range(a1, "B", 2)
    assert (b2.begin, b2.end) == (1, 2)


def test_intersect_fixture():
    assert list(intersect_values([rel(R).full_range(), rel(T).full_range()], "A")) == [1, 2]


def test_intersect_with_empty():
    r = rel(R)
    assert list(intersect_values([r.full_range(), Range(r, 0, 0)], "A")) == []


def test_intersect_single_relation_collapses_duplicates():
    assert list(intersect_values([rel(R).full_range()], "A")) == [1, 2]


rows3 = st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4), st.integers(0, 4)),
                 max_size=30)


@settings(max_examples=100, deadline=None)
@given(rows3)
def test_prefix_ranges_are_contiguous(rows):
    r = rel(R, rows)
    data = r.rows()
    for k in (1, 2):
        prefixes = [t[:k] for t in data]
        for p in set(prefixes):
            idx = [i for i, q in enumerate(prefixes) if q == p]
            assert idx == list(range(idx[0], idx[-1] + 1))


@settings(max_examples=100, deadline=None)
@given(rows3, st.integers(0, 5), st.integers(0, 5))
def test_narrow_matches_scan(rows, a, b):
    r = rel(R, rows)
    ra = narrow_range(r.full_range(), "A", a)
    col = r.columns["A"]
    assert all(col[i] == a for i in range(ra.begin, ra.end))
    assert all(col[i] != a for i in range(r.row_count) if not ra.begin <= i < ra.end)
    rb = narrow_range(ra, "B", b)
    assert ra.begin <= rb.begin <= rb.end <= ra.end
    assert all(r.columns["B"][i] == b for i in range(rb.begin, rb.end))
    assert len(rb) == sum(1 for t in r.rows() if t[0] == a and t[1] == b)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.lists(st.integers(0, 12), max_size=15), min_size=1, max_size=4))
def test_intersection_matches_set_oracle(columns):
    d = CategoryDictionary()
    ranges = []
    for i, values in enumerate(columns):
        schema = RelationSchema(f"R{i}", ("A",))
        ranges.append(make_relation(schema, [(v,) for v in values], KINDS, d).full_range())
    expected = sorted(set.intersection(*(set(map(float, c)) for c in columns)))
    got = list(intersect_values(ranges, "A"))
    assert got == expected
