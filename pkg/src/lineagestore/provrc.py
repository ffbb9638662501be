"""
ProvRC lineage compression.

A lineage relation is rewritten as a union of Cartesian products in two
passes:

1. *multi-attribute range encoding* over the dependent side: rows that agree
   on every other attribute and are contiguous on one attribute collapse into
   a range (attributes visited last to first);
2. *relative value transformation* plus range encoding over the anchored
   side: a dependent attribute may instead be stored as a delta against an
   anchored attribute, which lets runs of anchored values merge even when
   the absolute dependent values move with them.

For a backward table the anchored ("key") side is the output array and the
dependent ("value") side the input array; a forward table swaps the roles.
A stored delta is always ``dependent - anchor``, so for a backward table
``a_i = b_j + delta``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import kernels
from .core import ArrayMeta, LineageRelation, canonical_sort
from .errors import MalformedTableError, ValidationError

BACKWARD = "backward"
FORWARD = "forward"
DIRECTIONS = (BACKWARD, FORWARD)

_decompress_calls = 0


def decompress_calls() -> int:
    """Number of :func:`decompress` invocations in this process."""
    return _decompress_calls


def _check_direction(direction: str) -> str:
    if direction not in DIRECTIONS:
        raise ValidationError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    return direction


@dataclass(eq=False)
class CompressedTable:
    """Range/relative encoded lineage for one edge, in columnar form.

    ``key_*`` has shape ``(N, p)`` and always holds absolute ranges.
    ``val_*`` has shape ``(N, q)``; ``val_mask`` marks populated absolute
    cells. ``rel_*`` has shape ``(N, q, p)``: ``rel[n, i, j]`` is the delta
    range of value attribute ``i`` against key attribute ``j``.
    """

    direction: str
    out_array: ArrayMeta
    in_array: ArrayMeta
    key_lo: np.ndarray
    key_hi: np.ndarray
    val_lo: np.ndarray
    val_hi: np.ndarray
    val_mask: np.ndarray
    rel_lo: np.ndarray
    rel_hi: np.ndarray
    rel_mask: np.ndarray
    op_id: str | None = None

    # -- schema -----------------------------------------------------------

    @property
    def key_array(self) -> ArrayMeta:
        return self.out_array if self.direction == BACKWARD else self.in_array

    @property
    def val_array(self) -> ArrayMeta:
        return self.in_array if self.direction == BACKWARD else self.out_array

    @property
    def key_names(self) -> list[str]:
        p = "b" if self.direction == BACKWARD else "a"
        return [f"{p}{j + 1}" for j in range(self.key_array.dim)]

    @property
    def val_names(self) -> list[str]:
        p = "a" if self.direction == BACKWARD else "b"
        return [f"{p}{i + 1}" for i in range(self.val_array.dim)]

    def rel_name(self, i: int, j: int) -> str:
        return self.val_names[i] + self.key_names[j]

    @property
    def n_rows(self) -> int:
        return int(self.key_lo.shape[0])

    def __len__(self) -> int:
        return self.n_rows

    @classmethod
    def empty(cls, direction, out_array, in_array, n=0, op_id=None):
        _check_direction(direction)
        p = out_array.dim if direction == BACKWARD else in_array.dim
        q = in_array.dim if direction == BACKWARD else out_array.dim
        z2p = np.zeros((n, p), dtype=np.int64)
        z2q = np.zeros((n, q), dtype=np.int64)
        z3 = np.zeros((n, q, p), dtype=np.int64)
        return cls(direction, out_array, in_array, z2p, z2p.copy(), z2q, z2q.copy(),
                   np.zeros((n, q), dtype=bool), z3, z3.copy(), np.zeros((n, q, p), dtype=bool), op_id)

    def take(self, rows) -> "CompressedTable":
        rows = np.asarray(rows, dtype=np.int64)
        return replace(self, key_lo=self.key_lo[rows], key_hi=self.key_hi[rows], val_lo=self.val_lo[rows],
                       val_hi=self.val_hi[rows], val_mask=self.val_mask[rows], rel_lo=self.rel_lo[rows],
                       rel_hi=self.rel_hi[rows], rel_mask=self.rel_mask[rows])

    # -- inspection -------------------------------------------------------

    def columns(self) -> list[str]:
        """Column names in display order: keys, then each value attribute
        followed by its relative columns."""
        cols = list(self.key_names)
        for i, name in enumerate(self.val_names):
            cols.append(name)
            cols.extend(self.rel_name(i, j) for j in range(len(self.key_names)))
        return cols

    def to_records(self) -> list[dict[str, list[int] | None]]:
        out = []
        p = len(self.key_names)
        for n in range(self.n_rows):
            rec: dict[str, list[int] | None] = {}
            for j, name in enumerate(self.key_names):
                rec[name] = [int(self.key_lo[n, j]), int(self.key_hi[n, j])]
            for i, name in enumerate(self.val_names):
                rec[name] = [int(self.val_lo[n, i]), int(self.val_hi[n, i])] if self.val_mask[n, i] else None
                for j in range(p):
                    rec[self.rel_name(i, j)] = (
                        [int(self.rel_lo[n, i, j]), int(self.rel_hi[n, i, j])] if self.rel_mask[n, i, j] else None
                    )
            out.append(rec)
        return out

    @classmethod
    def from_records(cls, direction, out_array, in_array, records, op_id=None) -> "CompressedTable":
        """Inverse of :meth:`to_records`. A bound may be an int (width-1
        range) or ``[lo, hi]``; missing or ``None`` cells are empty."""
        t = cls.empty(direction, out_array, in_array, len(records), op_id)
        p = t.key_lo.shape[1]

        def rng(v):
            return (v, v) if isinstance(v, (int, np.integer)) else (v[0], v[1])

        for n, rec in enumerate(records):
            unknown = set(rec) - set(t.columns())
            if unknown:
                raise ValidationError(f"record {n}: unknown columns {sorted(unknown)}")
            for j, name in enumerate(t.key_names):
                if rec.get(name) is None:
                    raise ValidationError(f"record {n}: key column {name} is empty")
                t.key_lo[n, j], t.key_hi[n, j] = rng(rec[name])
            for i, name in enumerate(t.val_names):
                if rec.get(name) is not None:
                    t.val_lo[n, i], t.val_hi[n, i] = rng(rec[name])
                    t.val_mask[n, i] = True
                for j in range(p):
                    v = rec.get(t.rel_name(i, j))
                    if v is not None:
                        t.rel_lo[n, i, j], t.rel_hi[n, i, j] = rng(v)
                        t.rel_mask[n, i, j] = True
        if np.any(t.key_lo > t.key_hi) or np.any(t.val_mask & (t.val_lo > t.val_hi)) \
                or np.any(t.rel_mask & (t.rel_lo > t.rel_hi)):
            raise ValidationError("record has a range with lo > hi")
        return t

    def logical_equal(self, other: "CompressedTable") -> bool:
        """Cell-for-cell equality of schema and populated content."""
        if (self.direction, self.out_array, self.in_array) != (other.direction, other.out_array, other.in_array):
            return False
        if self.n_rows != other.n_rows:
            return False
        if not (np.array_equal(self.key_lo, other.key_lo) and np.array_equal(self.key_hi, other.key_hi)):
            return False
        if not (np.array_equal(self.val_mask, other.val_mask) and np.array_equal(self.rel_mask, other.rel_mask)):
            return False
        vm, rm = self.val_mask, self.rel_mask
        return (np.array_equal(self.val_lo[vm], other.val_lo[vm]) and np.array_equal(self.val_hi[vm], other.val_hi[vm])
                and np.array_equal(self.rel_lo[rm], other.rel_lo[rm]) and np.array_equal(self.rel_hi[rm], other.rel_hi[rm]))

    def value_choice(self) -> np.ndarray:
        """Per row and value attribute: -1 for the absolute column, else the
        key attribute whose relative column is used. Raises on rows with no
        usable column."""
        n, q, p = self.rel_mask.shape
        if p:
            first_rel = np.argmax(self.rel_mask, axis=2)
            has_rel = self.rel_mask.any(axis=2)
        else:
            first_rel = np.zeros((n, q), dtype=np.int64)
            has_rel = np.zeros((n, q), dtype=bool)
        choice = np.where(self.val_mask, -1, first_rel)
        bad = ~self.val_mask & ~has_rel
        if bad.any():
            r, i = map(int, np.argwhere(bad)[0])
            raise MalformedTableError(f"row {r}: attribute {self.val_names[i]} has no populated column")
        return choice

    def denotation_size(self) -> int:
        """Number of (output cell, input cell) pairs represented, computed
        from range widths without expansion."""
        if self.n_rows == 0:
            return 0
        choice = self.value_choice()
        count = np.prod(self.key_hi - self.key_lo + 1, axis=1)
        rows = np.arange(self.n_rows)
        for i in range(choice.shape[1]):
            c = choice[:, i]
            jj = np.maximum(c, 0)
            rel_w = self.rel_hi[rows, i, jj] - self.rel_lo[rows, i, jj] + 1
            abs_w = self.val_hi[:, i] - self.val_lo[:, i] + 1
            count = count * np.where(c < 0, abs_w, rel_w)
        return int(count.sum())


# ---------------------------------------------------------------------------
# compact working representation
# ---------------------------------------------------------------------------


@dataclass
class _Work:
    """Working rows while compressing: each value attribute has exactly one
    populated column; ``ref == -1`` means absolute, else the key it is
    relative to."""

    klo: np.ndarray
    khi: np.ndarray
    ref: np.ndarray
    vlo: np.ndarray
    vhi: np.ndarray

    @property
    def n(self):
        return self.klo.shape[0]

    def take(self, idx):
        return _Work(self.klo[idx], self.khi[idx], self.ref[idx], self.vlo[idx], self.vhi[idx])

    @staticmethod
    def concat(parts):
        return _Work(*(np.concatenate([getattr(w, f) for w in parts]) for f in ("klo", "khi", "ref", "vlo", "vhi")))


def _lexsort_rows(cols: list[np.ndarray]) -> np.ndarray:
    """Order sorting by ``cols[0]`` first, then ``cols[1]`` and so on."""
    if not cols:
        raise ValueError("need at least one sort column")
    return np.lexsort(cols[::-1])


def _same_as_prev(cols: list[np.ndarray], order: np.ndarray) -> np.ndarray:
    n = order.shape[0]
    same = np.ones(n, dtype=bool)
    for c in cols:
        s = c[order]
        same[1:] &= s[1:] == s[:-1]
    same[:1] = False
    return same


def _merge_on(lo: np.ndarray, hi: np.ndarray, others: list[np.ndarray]):
    """Sort by ``others`` then ``lo`` and find contiguous runs.

    Returns ``(order, starts, run_lo, run_hi)`` over the sorted positions.
    """
    order = _lexsort_rows(others + [lo])
    if others:
        same = _same_as_prev(others, order)
    else:
        same = np.ones(order.shape[0], dtype=bool)
    starts, rlo, rhi = kernels.run_starts(same, lo[order], hi[order], False)
    return order, starts, rlo, rhi


def _encode_value_ranges(work: _Work) -> _Work:
    """Step 1 on the dependent side; every value attribute is absolute."""
    q = work.vlo.shape[1]
    p = work.klo.shape[1]
    for v in range(q - 1, -1, -1):
        if work.n < 2:
            break
        others = [work.klo[:, j] for j in range(p)]
        for i in range(q):
            if i != v:
                others += [work.vlo[:, i], work.vhi[:, i]]
        order, starts, rlo, rhi = _merge_on(work.vlo[:, v], work.vhi[:, v], others)
        merged = work.take(order[starts])
        merged.vlo[:, v] = rlo
        merged.vhi[:, v] = rhi
        work = merged
    return work


def _combos(q: int):
    """Static/relative assignments for value attributes, all-static first."""
    allc = list(itertools.product((False, True), repeat=q))
    allc.sort(key=lambda c: (sum(c), tuple(not x for x in c)))
    return allc


def _relativize(work: _Work) -> _Work:
    """Step 2: merge runs over anchored attributes (last to first) where each
    dependent attribute is either constant or at a constant delta."""
    p = work.klo.shape[1]
    q = work.vlo.shape[1]
    for j in range(p - 1, -1, -1):
        if work.n < 2:
            break
        kj = work.klo[:, j]  # attribute j is still scalar here
        done = np.zeros(work.n, dtype=bool)
        merged_parts = []
        for combo in _combos(q):
            elig = ~done
            for i in range(q):
                if combo[i]:
                    elig &= work.ref[:, i] == -1
            idx = np.flatnonzero(elig)
            if idx.shape[0] < 2:
                continue
            sub = work.take(idx)
            skj = kj[idx]
            sig = []
            for k in range(p):
                if k != j:
                    sig += [sub.klo[:, k], sub.khi[:, k]]
            for i in range(q):
                if combo[i]:
                    sig += [sub.vlo[:, i] - skj, sub.vhi[:, i] - skj]
                else:
                    sig += [sub.ref[:, i], sub.vlo[:, i], sub.vhi[:, i]]
            order, starts, rlo, rhi = _merge_on(skj, skj, sig)
            lengths = np.diff(np.append(starts, order.shape[0]))
            multi = lengths >= 2
            if not multi.any():
                continue
            run_of = np.repeat(np.arange(starts.shape[0]), lengths)
            in_multi = multi[run_of]
            done[idx[order[in_multi]]] = True
            heads = order[starts[multi]]
            m = sub.take(heads)
            m.klo[:, j] = rlo[multi]
            m.khi[:, j] = rhi[multi]
            hk = skj[heads]
            for i in range(q):
                if combo[i]:
                    m.ref[:, i] = j
                    m.vlo[:, i] -= hk
                    m.vhi[:, i] -= hk
            merged_parts.append(m)
        if merged_parts:
            work = _Work.concat([work.take(np.flatnonzero(~done))] + merged_parts)
    return work


def _order_rows(work: _Work) -> _Work:
    if work.n < 2:
        return work
    cols = [work.klo[:, j] for j in range(work.klo.shape[1])]
    cols += [work.khi[:, j] for j in range(work.khi.shape[1])]
    for i in range(work.vlo.shape[1]):
        cols += [work.ref[:, i], work.vlo[:, i], work.vhi[:, i]]
    return work.take(_lexsort_rows(cols))


def _sides(rel: LineageRelation, direction: str):
    if direction == BACKWARD:
        return rel.out_idx, rel.in_idx
    return rel.in_idx, rel.out_idx


def _work_from_relation(rel: LineageRelation, direction: str) -> _Work:
    keys, vals = _sides(rel, direction)
    if direction == FORWARD:
        order = _lexsort_rows([keys[:, j] for j in range(keys.shape[1])] + [vals[:, i] for i in range(vals.shape[1])])
        keys, vals = keys[order], vals[order]
    keys = np.array(keys, dtype=np.int64)
    vals = np.array(vals, dtype=np.int64)
    ref = np.full(vals.shape, -1, dtype=np.int64)
    return _Work(keys, keys.copy(), ref, vals, vals.copy())


def _work_to_table(work: _Work, direction, out_array, in_array, op_id=None) -> CompressedTable:
    n, q = work.vlo.shape
    p = work.klo.shape[1]
    t = CompressedTable.empty(direction, out_array, in_array, n, op_id)
    t.key_lo[:] = work.klo
    t.key_hi[:] = work.khi
    absm = work.ref == -1
    t.val_mask[:] = absm
    t.val_lo[:] = np.where(absm, work.vlo, 0)
    t.val_hi[:] = np.where(absm, work.vhi, 0)
    for j in range(p):
        mj = work.ref == j
        t.rel_mask[:, :, j] = mj
        t.rel_lo[:, :, j] = np.where(mj, work.vlo, 0)
        t.rel_hi[:, :, j] = np.where(mj, work.vhi, 0)
    return t


def _work_from_table(t: CompressedTable) -> _Work:
    choice = t.value_choice()
    n, q = choice.shape
    rows = np.arange(n)[:, None]
    jj = np.maximum(choice, 0)
    qi = np.arange(q)[None, :]
    rlo = t.rel_lo[rows, qi, jj] if t.rel_lo.shape[2] else np.zeros((n, q), np.int64)
    rhi = t.rel_hi[rows, qi, jj] if t.rel_hi.shape[2] else np.zeros((n, q), np.int64)
    vlo = np.where(choice < 0, t.val_lo, rlo)
    vhi = np.where(choice < 0, t.val_hi, rhi)
    return _Work(t.key_lo.copy(), t.key_hi.copy(), choice.copy(), vlo.astype(np.int64), vhi.astype(np.int64))


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def range_encode_column(values: Sequence[int]) -> list[tuple[int, int]]:
    """Maximal disjoint inclusive ranges covering a sorted integer list."""
    arr = np.asarray(values, dtype=np.int64)
    if arr.size == 0:
        return []
    if np.any(arr[1:] < arr[:-1]):
        raise ValidationError("range_encode_column expects ascending input")
    arr = np.unique(arr)
    same = np.ones(arr.shape[0], dtype=bool)
    starts, lo, hi = kernels.run_starts(same, arr, arr, False)
    return list(zip(lo.tolist(), hi.tolist()))


def encode_input_ranges(rel: LineageRelation, direction: str = BACKWARD) -> CompressedTable:
    """Step 1 only: range-encode the dependent side of ``rel``."""
    _check_direction(direction)
    rel = canonical_sort(rel)
    work = _encode_value_ranges(_work_from_relation(rel, direction))
    return _work_to_table(_order_rows(work), direction, rel.out_array, rel.in_array)


def relativize_and_encode_outputs(t: CompressedTable) -> CompressedTable:
    """Step 2 only: relative transformation and anchored-side range encoding."""
    work = _relativize(_work_from_table(t))
    return _work_to_table(_order_rows(work), t.direction, t.out_array, t.in_array, t.op_id)


def compress(rel: LineageRelation, direction: str = BACKWARD, op_id: str | None = None) -> CompressedTable:
    _check_direction(direction)
    rel = canonical_sort(rel)
    work = _encode_value_ranges(_work_from_relation(rel, direction))
    work = _relativize(work)
    return _work_to_table(_order_rows(work), direction, rel.out_array, rel.in_array, op_id)


def decompress(t: CompressedTable) -> LineageRelation:
    """Expand a table back to its exact row set."""
    global _decompress_calls
    _decompress_calls += 1
    choice = t.value_choice()
    n = t.n_rows
    p = t.key_lo.shape[1]
    q = choice.shape[1]
    rows = np.arange(n, dtype=np.int64)
    keyvals: list[np.ndarray] = []
    for j in range(p):
        parent, vals = kernels.expand_ranges(t.key_lo[rows, j], t.key_hi[rows, j])
        rows = rows[parent]
        keyvals = [kv[parent] for kv in keyvals] + [vals]
    valvals: list[np.ndarray] = []
    for i in range(q):
        c = choice[rows, i]
        jj = np.maximum(c, 0)
        if p:
            base = np.stack(keyvals, axis=1)[np.arange(rows.shape[0]), jj] if rows.shape[0] else np.zeros(0, np.int64)
            rlo = t.rel_lo[rows, i, jj]
            rhi = t.rel_hi[rows, i, jj]
        else:
            base = rlo = rhi = np.zeros(rows.shape[0], dtype=np.int64)
        lo = np.where(c < 0, t.val_lo[rows, i], base + rlo)
        hi = np.where(c < 0, t.val_hi[rows, i], base + rhi)
        parent, vals = kernels.expand_ranges(lo, hi)
        rows = rows[parent]
        keyvals = [kv[parent] for kv in keyvals]
        valvals = [vv[parent] for vv in valvals] + [vals]
    kmat = np.stack(keyvals, axis=1) if keyvals else np.zeros((rows.shape[0], 0), np.int64)
    vmat = np.stack(valvals, axis=1) if valvals else np.zeros((rows.shape[0], 0), np.int64)
    if t.direction == BACKWARD:
        out_idx, in_idx = kmat, vmat
    else:
        out_idx, in_idx = vmat, kmat
    return LineageRelation.from_arrays(t.out_array, t.in_array, out_idx, in_idx)


def flip(t: CompressedTable) -> CompressedTable:
    """Materialize the opposite-direction table (goes through the row set)."""
    other = FORWARD if t.direction == BACKWARD else BACKWARD
    return compress(decompress(t), other, t.op_id)


def same_denotation(a: CompressedTable, b: CompressedTable) -> bool:
    if (a.out_array.shape, a.in_array.shape) != (b.out_array.shape, b.in_array.shape):
        return False
    if a.denotation_size() != b.denotation_size():
        return False
    return decompress(a) == decompress(b)


# ---------------------------------------------------------------------------
# index reshaping
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Term:
    """Symbolic bound ``coef * D + offset`` where ``D`` is the extent of
    axis ``axis`` of the operation's input number ``array``."""

    array: int
    axis: int
    coef: int = 1
    offset: int = 0

    def value(self, in_shapes: Sequence[Sequence[int]]) -> int:
        return self.coef * int(in_shapes[self.array][self.axis]) + self.offset

    def __str__(self):
        d = f"D{self.axis + 1}" if self.array == 0 else f"D{self.axis + 1}@{self.array + 1}"
        s = d if self.coef == 1 else f"{self.coef}*{d}"
        if self.offset:
            s += f"{self.offset:+d}"
        return s

    def to_json(self):
        return [int(self.array), int(self.axis), int(self.coef), int(self.offset)]

    @classmethod
    def from_json(cls, v):
        return cls(*map(int, v))


_FIELDS = ("key_lo", "key_hi", "val_lo", "val_hi", "rel_lo", "rel_hi")


@dataclass(eq=False)
class GeneralizedTable:
    """A compressed table whose shape-dependent bounds are symbolic.

    ``terms`` maps ``(field, flat_index)`` to a :class:`Term`; all other
    cells keep the template's concrete value.
    """

    template: CompressedTable
    in_shapes: tuple[tuple[int, ...], ...]
    edge_input: int
    terms: dict[tuple[str, int], Term]
    out_terms: tuple[int | Term, ...]
    ambiguities: list[str] = field(default_factory=list)

    @property
    def n_substitutions(self) -> int:
        return len(self.terms)

    def symbolic_records(self) -> list[dict]:
        recs = self.template.to_records()
        t = self.template
        p, q = t.key_lo.shape[1], t.val_lo.shape[1]
        for (fld, flat), term in self.terms.items():
            kind, bound = fld.split("_")
            b = 0 if bound == "lo" else 1
            if kind == "key":
                n, j = divmod(flat, p)
                name = t.key_names[j]
            elif kind == "val":
                n, i = divmod(flat, q)
                name = t.val_names[i]
            else:
                n, r = divmod(flat, q * p)
                i, j = divmod(r, p)
                name = t.rel_name(i, j)
            recs[n][name][b] = str(term)
        return recs


def _candidate_axes(in_shapes, edge_input: int, pos: int):
    order = []
    own = in_shapes[edge_input]
    if pos < len(own):
        order.append((edge_input, pos))
    order += [(edge_input, a) for a in range(len(own)) if a != pos]
    for k, shp in enumerate(in_shapes):
        if k == edge_input:
            continue
        if pos < len(shp):
            order.append((k, pos))
        order += [(k, a) for a in range(len(shp)) if a != pos]
    return order


def _match_exact(x: int, cands, in_shapes):
    hits = [(k, a) for k, a in cands if int(in_shapes[k][a]) == x]
    return hits


def _match_affine(x: int, cands, in_shapes, max_offset, max_coef):
    if abs(x) <= max_offset + 1:
        return []
    hits = []
    for k, a in cands:
        d = int(in_shapes[k][a])
        coef = int(np.round(x / d))
        if coef == 0 or abs(coef) > max_coef:
            continue
        off = x - coef * d
        if abs(off) <= max_offset:
            hits.append(Term(k, a, coef, off))
    return hits


def generalize(t: CompressedTable, in_shape, out_shape, *, op_in_shapes=None, edge_input: int = 0,
               mode: str = "extent", max_offset: int = 3, max_coef: int = 4) -> GeneralizedTable:
    """Replace shape-dependent bounds with symbolic extent terms.

    ``mode="extent"`` substitutes only absolute ranges exactly equal to
    ``[1, d]`` for an input extent ``d``. ``mode="affine"`` additionally
    rewrites any bound (absolute or relative) of magnitude above
    ``max_offset + 1`` as ``coef * D + offset`` with ``|offset| <=
    max_offset``. Between equal extents, the axis at the same position in
    the edge's own input wins; the others are recorded as ambiguities.
    """
    if mode not in ("extent", "affine"):
        raise ValueError(f"unknown generalize mode {mode!r}")
    in_shapes = tuple(tuple(int(x) for x in s) for s in (op_in_shapes or [in_shape]))
    if tuple(in_shapes[edge_input]) != tuple(int(x) for x in in_shape):
        raise ValidationError("in_shape does not match op_in_shapes[edge_input]")
    terms: dict[tuple[str, int], Term] = {}
    ambiguities: list[str] = []
    p, q = t.key_lo.shape[1], t.val_lo.shape[1]

    def note(where, hits):
        if len({(h[0], h[1]) if isinstance(h, tuple) else (h.array, h.axis) for h in hits}) > 1:
            ambiguities.append(f"{where}: matches {len(hits)} axes")

    def scan(kind, lo, hi, mask, positions):
        flat_lo, flat_hi = lo.ravel(), hi.ravel()
        flat_mask = mask.ravel() if mask is not None else np.ones(flat_lo.shape[0], bool)
        for flat in np.flatnonzero(flat_mask):
            pos = positions(flat)
            cands = _candidate_axes(in_shapes, edge_input, pos)
            lo_v, hi_v = int(flat_lo[flat]), int(flat_hi[flat])
            if kind != "rel" and lo_v == 1:
                hits = _match_exact(hi_v, cands, in_shapes)
                if hits:
                    note(f"{kind}_hi[{flat}]", hits)
                    terms[(f"{kind}_hi", int(flat))] = Term(hits[0][0], hits[0][1])
            if mode == "affine":
                for bound, v in (("lo", lo_v), ("hi", hi_v)):
                    if (f"{kind}_{bound}", int(flat)) in terms:
                        continue
                    hits = _match_affine(v, cands, in_shapes, max_offset, max_coef)
                    if hits:
                        note(f"{kind}_{bound}[{flat}]", hits)
                        terms[(f"{kind}_{bound}", int(flat))] = hits[0]

    scan("key", t.key_lo, t.key_hi, None, lambda f: f % p)
    scan("val", t.val_lo, t.val_hi, t.val_mask, lambda f: f % q)
    scan("rel", t.rel_lo, t.rel_hi, t.rel_mask, lambda f: (f % (q * p)) // p)

    out_terms: list[int | Term] = []
    for pos, e in enumerate(int(x) for x in out_shape):
        cands = _candidate_axes(in_shapes, edge_input, pos)
        hits = _match_exact(e, cands, in_shapes)
        if hits and e > 1:
            note(f"out_shape[{pos}]", hits)
            out_terms.append(Term(hits[0][0], hits[0][1]))
            continue
        ahits = _match_affine(e, cands, in_shapes, max_offset, max_coef) if mode == "affine" else []
        out_terms.append(ahits[0] if ahits else e)
    return GeneralizedTable(t, in_shapes, edge_input, terms, tuple(out_terms), ambiguities)


def instantiate(g: GeneralizedTable, in_shape=None, *, op_in_shapes=None, out_id=None, in_id=None) -> CompressedTable:
    """Evaluate every symbolic bound for a new input shape."""
    if op_in_shapes is None:
        if in_shape is None:
            raise ValidationError("instantiate needs in_shape or op_in_shapes")
        if len(g.in_shapes) != 1:
            shapes = list(g.in_shapes)
            shapes[g.edge_input] = tuple(in_shape)
            op_in_shapes = shapes
        else:
            op_in_shapes = [in_shape]
    shapes = tuple(tuple(int(x) for x in s) for s in op_in_shapes)
    if len(shapes) != len(g.in_shapes) or any(len(a) != len(b) for a, b in zip(shapes, g.in_shapes)):
        raise ValidationError(f"dimensionality mismatch: table built for {g.in_shapes}, got {shapes}")
    t = g.template
    arrays = {f: getattr(t, f).copy() for f in _FIELDS}
    for (fld, flat), term in g.terms.items():
        arrays[fld].reshape(-1)[flat] = term.value(shapes)
    out_shape = tuple(x.value(shapes) if isinstance(x, Term) else int(x) for x in g.out_terms)
    in_meta = ArrayMeta(in_id or t.in_array.id, shapes[g.edge_input])
    out_meta = ArrayMeta(out_id or t.out_array.id, out_shape)
    res = replace(t, out_array=out_meta, in_array=in_meta, **arrays)
    if np.any(res.key_lo > res.key_hi) or np.any(res.key_lo < 1):
        raise ValidationError("instantiated table has empty or out-of-range key ranges")
    if np.any(res.val_mask & ((res.val_lo > res.val_hi) | (res.val_lo < 1))):
        raise ValidationError("instantiated table has empty or out-of-range value ranges")
    if np.any(res.rel_mask & (res.rel_lo > res.rel_hi)):
        raise ValidationError("instantiated table has empty relative ranges")
    return res
