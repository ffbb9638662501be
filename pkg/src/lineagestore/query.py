"""
In-situ lineage queries over compressed tables.

A hop joins the current set of query boxes against the table whose key
(absolute) side is the current array, turns the surviving relative columns
back into absolute ranges and projects onto the opposite array. Nothing in
this module expands a table into cells; the decompress counter in
:mod:`lineagestore.provrc` stays untouched.

Boxes are rows of inclusive per-axis ranges. Two rows may overlap; only
:func:`canonicalize` produces a disjoint form.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from . import kernels
from .core import ArrayMeta
from .errors import QueryLimitError, ValidationError
from .provrc import BACKWARD, FORWARD, CompressedTable

DEFAULT_MAX_ROWS = 5_000_000


@dataclass
class Boxes:
    """Union of axis-aligned boxes over one array."""

    array: ArrayMeta
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.int64).reshape(-1, self.array.dim)
        self.hi = np.asarray(self.hi, dtype=np.int64).reshape(-1, self.array.dim)

    def __len__(self):
        return int(self.lo.shape[0])

    def records(self) -> list[list[list[int]]]:
        return [[[int(a), int(b)] for a, b in zip(l, h)] for l, h in zip(self.lo.tolist(), self.hi.tolist())]

    def n_cells(self) -> int:
        """Cell count, valid for disjoint boxes."""
        return int(np.prod(self.hi - self.lo + 1, axis=1).sum()) if len(self) else 0

    def cells(self) -> np.ndarray:
        """Unique cells covered, sorted, as ``(N, d)``."""
        d = self.array.dim
        rows = np.arange(len(self), dtype=np.int64)
        cols: list[np.ndarray] = []
        for k in range(d):
            parent, vals = kernels.expand_ranges(self.lo[rows, k], self.hi[rows, k])
            rows = rows[parent]
            cols = [c[parent] for c in cols] + [vals]
        if not cols or cols[0].shape[0] == 0:
            return np.zeros((0, d), dtype=np.int64)
        return np.unique(np.stack(cols, axis=1), axis=0)


# ---------------------------------------------------------------------------
# merging and canonical form
# ---------------------------------------------------------------------------


def merge_boxes(lo, hi, rounds: int = 1):
    """Merge boxes that agree on all axes but one and touch on it; see
    :func:`lineagestore.kernels.merge_boxes_numpy`."""
    lo = np.asarray(lo, dtype=np.int64)
    hi = np.asarray(hi, dtype=np.int64)
    if lo.shape[0] < 2:
        return lo, hi
    return kernels.merge_boxes(lo, hi, rounds)


def canonicalize(b: Boxes) -> Boxes:
    """Sorted, disjoint, maximal boxes determined only by the covered cell set:
    slabs along axis 0 split wherever the cross-section changes, each
    cross-section canonicalized recursively."""
    lo, hi = merge_boxes(b.lo, b.hi)
    if lo.shape[0] > 1:
        lo, hi = kernels.canon_boxes(lo, hi)
    return Boxes(b.array, lo, hi)


# ---------------------------------------------------------------------------
# plan operators
# ---------------------------------------------------------------------------


def encode_query(cells, array: ArrayMeta) -> Boxes:
    """Range-encode a set of index tuples (or ``[lo, hi]`` range rows).

    Accepts an ``(N, d)`` integer array / list of tuples, or a list whose
    rows are ``[[lo, hi], ...]`` per axis.
    """
    if isinstance(cells, Boxes):
        lo, hi = cells.lo, cells.hi
    else:
        arr = np.asarray(cells, dtype=np.int64)
        d = array.dim
        if arr.size == 0:
            raise ValidationError("empty query")
        if arr.ndim == 3 and arr.shape[1:] == (d, 2):
            lo, hi = arr[:, :, 0], arr[:, :, 1]
        else:
            arr = arr.reshape(-1, d) if arr.ndim == 1 and d == 1 else arr
            if arr.ndim != 2 or arr.shape[1] != d:
                raise ValidationError(f"query cells must have {d} components per cell for array {array.id!r}")
            lo, hi = arr, arr
    if lo.shape[0] == 0:
        raise ValidationError("empty query")
    ext = np.asarray(array.shape, dtype=np.int64)
    if np.any(lo > hi) or np.any(lo < 1) or np.any(hi > ext):
        bad = int(np.flatnonzero(np.any((lo < 1) | (hi > ext) | (lo > hi), axis=1))[0])
        raise ValidationError(f"query cell {lo[bad].tolist()} is outside array {array.id!r} of shape {array.shape}")
    lo, hi = merge_boxes(lo, hi)
    return Boxes(array, lo, hi)


@dataclass
class JoinedRows:
    """Range-join output: intersected key ranges plus the source table row."""

    table: CompressedTable
    key_lo: np.ndarray
    key_hi: np.ndarray
    src_row: np.ndarray
    q_row: np.ndarray

    def __len__(self):
        return int(self.src_row.shape[0])

    def to_records(self):
        t = self.table.take(self.src_row)
        t.key_lo = self.key_lo
        t.key_hi = self.key_hi
        return t.to_records()


def range_join(q: Boxes, r: CompressedTable, max_rows: int = DEFAULT_MAX_ROWS) -> JoinedRows:
    """Overlap join on every key attribute; output carries intersections."""
    if q.array.dim != r.key_lo.shape[1] or tuple(q.array.shape) != tuple(r.key_array.shape):
        raise ValidationError(f"query over {q.array.id}{q.array.shape} does not match table keyed on "
                              f"{r.key_array.id}{r.key_array.shape}")
    ii, jj = kernels.interval_join(q.lo[:, 0], q.hi[:, 0], r.key_lo[:, 0], r.key_hi[:, 0])
    p = r.key_lo.shape[1]
    if p > 1 and ii.shape[0]:
        ok = np.ones(ii.shape[0], dtype=bool)
        for k in range(1, p):
            ok &= (q.lo[ii, k] <= r.key_hi[jj, k]) & (r.key_lo[jj, k] <= q.hi[ii, k])
        ii, jj = ii[ok], jj[ok]
    if ii.shape[0] > max_rows:
        raise QueryLimitError(f"range join produced {ii.shape[0]} rows (limit {max_rows})")
    klo = np.maximum(q.lo[ii], r.key_lo[jj])
    khi = np.minimum(q.hi[ii], r.key_hi[jj])
    return JoinedRows(r, klo, khi, jj, ii)


def rel_back(t_x, t_xy):
    """Absolute range of the dependent side for key range ``t_x`` and delta
    range ``t_xy``: ``[t_x.lo + t_xy.lo, t_x.hi + t_xy.hi]``."""
    return (t_x[0] + t_xy[0], t_x[1] + t_xy[1])


def rel_for(t_x, r_x, t_xy, extent=None):
    """Forward counterpart of :func:`rel_back`. ``t_x`` must lie inside the
    row's key range ``r_x``; with deltas stored as (dependent - anchor) the
    shift is the same as for backward tables, clipped to ``extent``."""
    if t_x[0] < r_x[0] or t_x[1] > r_x[1]:
        raise ValidationError(f"t_x {tuple(t_x)} not inside row range {tuple(r_x)}")
    lo, hi = t_x[0] + t_xy[0], t_x[1] + t_xy[1]
    if extent is not None:
        lo, hi = max(lo, 1), min(hi, extent)
    return (lo, hi)


@dataclass
class DerivedRows:
    """Fully absolute rows: key ranges and value ranges."""

    table: CompressedTable
    key_lo: np.ndarray
    key_hi: np.ndarray
    val_lo: np.ndarray
    val_hi: np.ndarray

    def __len__(self):
        return int(self.key_lo.shape[0])

    def to_records(self):
        out = []
        kn, vn = self.table.key_names, self.table.val_names
        for n in range(len(self)):
            rec = {}
            for j, name in enumerate(kn):
                rec[name] = [int(self.key_lo[n, j]), int(self.key_hi[n, j])]
            for i, name in enumerate(vn):
                rec[name] = [int(self.val_lo[n, i]), int(self.val_hi[n, i])]
            out.append(rec)
        return out


def _split_shared_keys(j: JoinedRows, choice: np.ndarray, max_rows: int) -> JoinedRows:
    """Split rows to unit width on any key that anchors two or more value
    attributes, so the per-attribute shift stays exact."""
    q, p = choice.shape[1], j.key_lo.shape[1]
    for k in range(p):
        shared = (choice == k).sum(axis=1) >= 2
        wide = shared & (j.key_hi[:, k] > j.key_lo[:, k])
        if not wide.any():
            continue
        counts = np.where(wide, j.key_hi[:, k] - j.key_lo[:, k] + 1, 1)
        if int(counts.sum()) > max_rows:
            raise QueryLimitError(f"diagonal split needs {int(counts.sum())} rows (limit {max_rows})")
        lo_k = j.key_lo[:, k]
        hi_k = np.where(wide, j.key_hi[:, k], lo_k)
        parent, vals = kernels.expand_ranges(lo_k, hi_k)
        klo, khi = j.key_lo[parent], j.key_hi[parent]
        klo[:, k] = np.where(wide[parent], vals, klo[:, k])
        khi[:, k] = np.where(wide[parent], vals, khi[:, k])
        j = JoinedRows(j.table, klo, khi, j.src_row[parent], j.q_row[parent])
        choice = choice[parent]
    return j, choice


def derelativize(j: JoinedRows, max_rows: int = DEFAULT_MAX_ROWS, choice: np.ndarray | None = None) -> DerivedRows:
    """Replace relative columns by absolute ranges using the intersected keys."""
    t = j.table
    if choice is None:
        choice = t.value_choice()
    c = choice[j.src_row] if len(j) else np.zeros((0, choice.shape[1]), np.int64)
    j, c = _split_shared_keys(j, c, max_rows)
    n, q = c.shape
    src = j.src_row
    rows = np.arange(n)[:, None]
    kk = np.maximum(c, 0)
    qi = np.arange(q)[None, :]
    if t.rel_lo.shape[2]:
        dlo = t.rel_lo[src[:, None], qi, kk]
        dhi = t.rel_hi[src[:, None], qi, kk]
        blo = j.key_lo[rows, kk]
        bhi = j.key_hi[rows, kk]
    else:
        dlo = dhi = blo = bhi = np.zeros((n, q), np.int64)
    vlo = np.where(c < 0, t.val_lo[src], blo + dlo)
    vhi = np.where(c < 0, t.val_hi[src], bhi + dhi)
    ext = np.asarray(t.val_array.shape, dtype=np.int64)
    vlo = np.maximum(vlo, 1)
    vhi = np.minimum(vhi, ext)
    ok = np.all(vlo <= vhi, axis=1)
    return DerivedRows(t, j.key_lo[ok], j.key_hi[ok], vlo[ok], vhi[ok])


def project_and_merge(d: DerivedRows, keep: str = "value", merge: bool = True) -> Boxes:
    """Project onto the value (or key) attributes and merge rows that agree
    on all but one attribute with overlapping or adjacent ranges."""
    if keep == "value":
        arr, lo, hi = d.table.val_array, d.val_lo, d.val_hi
    elif keep == "key":
        arr, lo, hi = d.table.key_array, d.key_lo, d.key_hi
    else:
        raise ValueError("keep must be 'value' or 'key'")
    if merge:
        lo, hi = merge_boxes(lo, hi)
    return Boxes(arr, lo, hi)


# ---------------------------------------------------------------------------
# path execution
# ---------------------------------------------------------------------------


class TableSource(Protocol):
    def table_for(self, src: str, dst: str, direction: str = "auto") -> CompressedTable: ...

    def array(self, array_id: str) -> ArrayMeta: ...


@dataclass
class QuerySpec:
    path: list[str]
    cells: object
    direction: str = "auto"

    def __post_init__(self):
        if len(self.path) < 2:
            raise ValidationError("query path needs at least two arrays")
        if self.direction not in ("auto", BACKWARD, FORWARD):
            raise ValidationError(f"direction must be auto, forward or backward, got {self.direction!r}")


@dataclass
class ResultTable:
    boxes: Boxes
    stats: dict = field(default_factory=dict)

    @property
    def array(self):
        return self.boxes.array

    def records(self):
        return self.boxes.records()

    def cells(self):
        return self.boxes.cells()

    def __len__(self):
        return len(self.boxes)


def _hop_cache(t: CompressedTable) -> dict:
    """Per-table arrays reused by every hop over ``t`` (computed once)."""
    c = t.__dict__.get("_hop_cache")
    if c is None:
        choice = t.value_choice()
        ob = np.argsort(t.key_lo[:, 0], kind="stable")
        c = {"choice": choice, "ob": ob, "sb": np.ascontiguousarray(t.key_lo[ob, 0]),
             "ext": np.asarray(t.val_array.shape, dtype=np.int64)}
        t.__dict__["_hop_cache"] = c
    return c


def hop(cur: Boxes, t: CompressedTable, *, merge: bool = True, max_rows: int = DEFAULT_MAX_ROWS):
    """One θ-join hop; returns the projected boxes and the join/derive counts."""
    c = _hop_cache(t)
    if kernels.USE_NUMBA:
        if cur.array.dim != t.key_lo.shape[1] or tuple(cur.array.shape) != tuple(t.key_array.shape):
            raise ValidationError(f"query over {cur.array.id}{cur.array.shape} does not match table keyed on "
                                  f"{t.key_array.id}{t.key_array.shape}")
        lo, hi, joined = kernels.theta_hop_numba(cur.lo, cur.hi, t.key_lo, t.key_hi, c["ob"], c["sb"], c["choice"],
                                                 t.val_lo, t.val_hi, t.rel_lo, t.rel_hi, c["ext"], max_rows)
        if joined < 0:
            raise QueryLimitError(f"hop {t.key_array.id}->{t.val_array.id} exceeded {max_rows} intermediate rows")
        derived = lo.shape[0]
        if merge:
            lo, hi = merge_boxes(lo, hi)
        return Boxes(t.val_array, lo, hi), joined, derived
    j = range_join(cur, t, max_rows)
    dr = derelativize(j, max_rows, c["choice"])
    if len(dr) > max_rows:
        raise QueryLimitError(f"intermediate result has {len(dr)} rows (limit {max_rows})")
    return project_and_merge(dr, "value", merge), len(j), len(dr)


def run_hops(q: Boxes, tables: Sequence[CompressedTable], *, merge: bool = True,
             max_rows: int = DEFAULT_MAX_ROWS, canonical: bool = True) -> ResultTable:
    """Execute a left-to-right plan over already-resolved hop tables."""
    hops = []
    t0 = time.perf_counter()
    cur = q
    for t in tables:
        n_in = len(cur)
        cur, joined, derived = hop(cur, t, merge=merge, max_rows=max_rows)
        hops.append({"table": f"{t.key_array.id}->{t.val_array.id}", "direction": t.direction,
                     "table_rows": t.n_rows, "input_rows": n_in, "joined_rows": joined,
                     "derived_rows": derived, "output_rows": len(cur)})
    if canonical:
        cur = canonicalize(cur)
    stats = {"hops": hops, "result_rows": len(cur), "wall_s": time.perf_counter() - t0}
    return ResultTable(cur, stats)


def prov_query(spec: QuerySpec, catalog: TableSource, *, merge: bool = True,
               max_rows: int = DEFAULT_MAX_ROWS) -> ResultTable:
    """Lineage of ``spec.cells`` (over ``path[0]``) at ``path[-1]``."""
    tables = [catalog.table_for(a, b, spec.direction) for a, b in zip(spec.path[:-1], spec.path[1:])]
    first = tables[0].key_array
    q = encode_query(spec.cells, first)
    return run_hops(q, tables, merge=merge, max_rows=max_rows)


class TableList:
    """In-memory :class:`TableSource` over both directions of some tables."""

    def __init__(self, tables: Sequence[CompressedTable]):
        self._by = {}
        self._arrays = {}
        for t in tables:
            self._by[(t.key_array.id, t.val_array.id)] = t
            self._arrays[t.out_array.id] = t.out_array
            self._arrays[t.in_array.id] = t.in_array

    def table_for(self, src, dst, direction="auto"):
        from .errors import MissingEdgeError

        t = self._by.get((src, dst))
        if t is None:
            raise MissingEdgeError(f"missing edge between {src} and {dst}")
        if direction != "auto" and t.direction != direction:
            raise MissingEdgeError(f"no {direction} table from {src} to {dst}")
        return t

    def array(self, array_id):
        return self._arrays[array_id]
