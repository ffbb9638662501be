import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lineagestore.core import (ArrayMeta, IndexRange, LineageRelation, canonical_sort, check, parse_csv_rows,
                               read_relation, validate, write_csv, write_jsonl)
from lineagestore.errors import ValidationError


def test_array_meta_rejects_bad_shapes():
    with pytest.raises(ValidationError):
        ArrayMeta("A", ())
    with pytest.raises(ValidationError):
        ArrayMeta("A", (3, 0))
    a = ArrayMeta("A", (3, 2))
    assert a.dim == 2 and a.size == 6


def test_index_range():
    r = IndexRange(2, 5)
    assert r.width == 4
    assert r.intersect(IndexRange(4, 9)) == IndexRange(4, 5)
    assert r.intersect(IndexRange(6, 9)) is None


def test_canonical_sort_orders_rows(fig1_rel):
    shuffled = LineageRelation.from_rows(fig1_rel.out_array, fig1_rel.in_array,
                                         list(fig1_rel)[::-1], dedupe=False)
    s = canonical_sort(shuffled)
    assert [r.out_idx + r.in_idx for r in s] == [(1, 1, 1), (1, 1, 2), (2, 2, 1), (2, 2, 2), (3, 3, 1), (3, 3, 2)]


def test_canonical_sort_empty_and_duplicates():
    a, b = ArrayMeta("A", (4,)), ArrayMeta("B", (4,))
    empty = LineageRelation.from_rows(b, a, [])
    assert len(canonical_sort(empty)) == 0
    dup = LineageRelation.from_rows(b, a, [((1,), (1,)), ((1,), (1,)), ((2,), (3,))], dedupe=False)
    s = canonical_sort(dup)
    assert len(s) == len(dup) - 1
    ingest = LineageRelation.from_rows(b, a, [((1,), (1,)), ((1,), (1,))])
    assert len(ingest) == 1 and ingest.duplicates_dropped == 1


def test_validate(fig1_rel):
    assert validate(fig1_rel) is None
    bad = LineageRelation.from_rows(ArrayMeta("B", (3,)), ArrayMeta("A", (3, 2)), [((1,), (1, 1)), ((4,), (1, 1))])
    v = validate(bad)
    assert v is not None and v.row == 1
    zero = LineageRelation.from_rows(ArrayMeta("B", (3,)), ArrayMeta("A", (3, 2)), [((1,), (0, 1))])
    assert "1-based" in str(validate(zero))
    with pytest.raises(ValidationError):
        check(zero)


def test_dimension_mismatch_rejected():
    with pytest.raises(ValidationError):
        LineageRelation.from_rows(ArrayMeta("B", (3,)), ArrayMeta("A", (3, 2)), [((1,), (1,))])


def test_jsonl_and_csv_round_trip(fig1_rel):
    buf = io.StringIO()
    write_jsonl(fig1_rel, buf)
    buf.seek(0)
    assert read_relation(buf, fig1_rel.out_array, fig1_rel.in_array) == fig1_rel
    buf = io.StringIO()
    write_csv(fig1_rel, buf)
    assert buf.getvalue().splitlines()[0] == "b_1,a_1,a_2"
    buf.seek(0)
    assert read_relation(buf, fig1_rel.out_array, fig1_rel.in_array, fmt="csv") == fig1_rel


def test_zero_based_ingest():
    buf = io.StringIO("[[0],[0,1]]\n")
    rel = read_relation(buf, ArrayMeta("B", (3,)), ArrayMeta("A", (3, 2)), zero_based=True)
    assert rel.row_set() == {(1, 1, 2)}


def test_csv_column_count_checked():
    with pytest.raises(ValidationError):
        parse_csv_rows("1,2\n", 1, 2)


rows = st.lists(st.tuples(st.integers(1, 5), st.integers(1, 4), st.integers(1, 3)), max_size=60)


@given(rows)
def test_canonical_sort_idempotent_and_set_preserving(rs):
    rel = LineageRelation.from_rows(ArrayMeta("B", (5,)), ArrayMeta("A", (4, 3)),
                                    [((b,), (x, y)) for b, x, y in rs], dedupe=False)
    once = canonical_sort(rel)
    twice = canonical_sort(once)
    assert np.array_equal(once.matrix(), twice.matrix())
    assert once.row_set() == set(rs)
    m = once.matrix()
    assert all(tuple(m[i]) < tuple(m[i + 1]) for i in range(len(m) - 1))
    assert validate(once) is None
