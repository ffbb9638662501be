"""
Arrays, index ranges and uncompressed lineage relations.

A lineage relation for one edge ``A -> B`` is a set of rows
``(b_1..b_l, a_1..a_m)``: output cell index first, input cell index second.
All indices are 1-based. Rows are stored densely as two int64 matrices.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class ArrayMeta:
    id: str
    shape: tuple[int, ...]

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        object.__setattr__(self, "shape", shape)
        if not shape:
            raise ValidationError(f"array {self.id!r}: shape must be non-empty")
        if any(s < 1 for s in shape):
            raise ValidationError(f"array {self.id!r}: extents must be >= 1, got {shape}")

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))


class IndexRange(NamedTuple):
    lo: int
    hi: int

    @property
    def width(self) -> int:
        return self.hi - self.lo + 1

    def intersect(self, other: "IndexRange") -> "IndexRange | None":
        lo, hi = max(self.lo, other.lo), min(self.hi, other.hi)
        return IndexRange(lo, hi) if lo <= hi else None


class LineageRow(NamedTuple):
    out_idx: tuple[int, ...]
    in_idx: tuple[int, ...]


def _as_matrix(idx, ncols: int) -> np.ndarray:
    arr = np.asarray(idx, dtype=np.int64)
    if arr.size == 0:
        return np.empty((0, ncols), dtype=np.int64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[1] != ncols:
        raise ValidationError(f"expected index rows with {ncols} components, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def _unique_rows(out_idx: np.ndarray, in_idx: np.ndarray):
    """Sort rows lexicographically (outputs first) and drop duplicates."""
    n = out_idx.shape[0]
    if n == 0:
        return out_idx, in_idx
    both = np.hstack([out_idx, in_idx])
    order = np.lexsort(both.T[::-1])
    both = both[order]
    keep = np.ones(n, dtype=bool)
    keep[1:] = np.any(both[1:] != both[:-1], axis=1)
    both = both[keep]
    l = out_idx.shape[1]
    return np.ascontiguousarray(both[:, :l]), np.ascontiguousarray(both[:, l:])


@dataclass(frozen=True, eq=False)
class LineageRelation:
    """Cell-level lineage between ``in_array`` (A) and ``out_array`` (B).

    Construct through :meth:`from_rows` or :meth:`from_arrays`, which apply
    set semantics; ``duplicates_dropped`` reports how many rows were merged.
    """

    out_array: ArrayMeta
    in_array: ArrayMeta
    out_idx: np.ndarray
    in_idx: np.ndarray
    duplicates_dropped: int = field(default=0, compare=False)

    @classmethod
    def from_arrays(cls, out_array, in_array, out_idx, in_idx, *, dedupe=True, zero_based=False):
        o = _as_matrix(out_idx, out_array.dim)
        i = _as_matrix(in_idx, in_array.dim)
        if o.shape[0] != i.shape[0]:
            raise ValidationError("output and input index matrices differ in row count")
        if zero_based:
            o, i = o + 1, i + 1
        dropped = 0
        if dedupe:
            n = o.shape[0]
            o, i = _unique_rows(o, i)
            dropped = n - o.shape[0]
        return cls(out_array, in_array, o, i, dropped)

    @classmethod
    def from_rows(cls, out_array, in_array, rows: Iterable, **kw):
        rows = list(rows)
        o = [tuple(r[0]) for r in rows]
        i = [tuple(r[1]) for r in rows]
        return cls.from_arrays(out_array, in_array, o, i, **kw)

    def __len__(self) -> int:
        return int(self.out_idx.shape[0])

    def __iter__(self) -> Iterator[LineageRow]:
        for o, i in zip(self.out_idx.tolist(), self.in_idx.tolist()):
            yield LineageRow(tuple(o), tuple(i))

    def row_set(self) -> set[tuple[int, ...]]:
        both = np.hstack([self.out_idx, self.in_idx])
        return set(map(tuple, both.tolist()))

    def matrix(self) -> np.ndarray:
        """Rows as one ``(N, l + m)`` matrix, output columns first."""
        return np.hstack([self.out_idx, self.in_idx])

    def __eq__(self, other):
        if not isinstance(other, LineageRelation):
            return NotImplemented
        if self.out_array.dim != other.out_array.dim or self.in_array.dim != other.in_array.dim:
            return False
        a = canonical_sort(self)
        b = canonical_sort(other)
        return len(a) == len(b) and np.array_equal(a.matrix(), b.matrix())

    __hash__ = None


def canonical_sort(rel: LineageRelation) -> LineageRelation:
    """Lexicographic order ``b_1..b_l, a_1..a_m`` with duplicates removed."""
    o, i = _unique_rows(rel.out_idx, rel.in_idx)
    return LineageRelation(rel.out_array, rel.in_array, o, i, len(rel) - o.shape[0])


@dataclass
class Violation:
    row: int
    message: str

    def __str__(self):
        return f"row {self.row}: {self.message}"


def validate(rel: LineageRelation) -> Violation | None:
    """Return ``None`` when every index is in bounds, else the first violation."""
    for name, idx, meta in (("out_idx", rel.out_idx, rel.out_array), ("in_idx", rel.in_idx, rel.in_array)):
        if idx.ndim != 2 or idx.shape[1] != meta.dim:
            width = idx.shape[1] if idx.ndim == 2 else idx.ndim
            return Violation(0, f"{name} has {width} components but array {meta.id!r} has {meta.dim} axes")
    bad = np.zeros(len(rel), dtype=bool)
    for idx, meta in ((rel.out_idx, rel.out_array), (rel.in_idx, rel.in_array)):
        ext = np.asarray(meta.shape, dtype=np.int64)
        bad |= np.any((idx < 1) | (idx > ext), axis=1)
    if bad.any():
        r = int(np.flatnonzero(bad)[0])
        return Violation(r, f"index {tuple(rel.out_idx[r])} <- {tuple(rel.in_idx[r])} outside "
                            f"{rel.out_array.shape} <- {rel.in_array.shape} (indices are 1-based)")
    return None


def check(rel: LineageRelation) -> LineageRelation:
    v = validate(rel)
    if v is not None:
        raise ValidationError(str(v))
    return rel


# ---------------------------------------------------------------------------
# ingest format: JSON lines ``[[b...], [a...]]`` or CSV ``b_1..b_l,a_1..a_m``
# ---------------------------------------------------------------------------


def parse_jsonl_rows(lines: Iterable[str]) -> list[tuple[list[int], list[int]]]:
    rows = []
    for n, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
            out_idx, in_idx = rec
            rows.append(([int(x) for x in out_idx], [int(x) for x in in_idx]))
        except (ValueError, TypeError) as exc:
            raise ValidationError(f"line {n}: expected [out_idx, in_idx], got {line[:60]!r}") from exc
    return rows


def parse_csv_rows(text: str, l: int, m: int) -> list[tuple[list[int], list[int]]]:
    reader = csv.reader(io.StringIO(text))
    rows = []
    for n, rec in enumerate(reader, 1):
        if not rec:
            continue
        if n == 1 and not rec[0].strip().lstrip("-").isdigit():
            continue  # header
        if len(rec) != l + m:
            raise ValidationError(f"csv line {n}: expected {l + m} columns, got {len(rec)}")
        vals = [int(x) for x in rec]
        rows.append((vals[:l], vals[l:]))
    return rows


def read_relation(fp: IO[str], out_array: ArrayMeta, in_array: ArrayMeta, *, fmt="jsonl", zero_based=False):
    text = fp.read()
    if fmt == "csv":
        rows = parse_csv_rows(text, out_array.dim, in_array.dim)
    else:
        rows = parse_jsonl_rows(text.splitlines())
    return check(LineageRelation.from_rows(out_array, in_array, rows, zero_based=zero_based))


def write_jsonl(rel: LineageRelation, fp: IO[str]) -> None:
    for o, i in zip(rel.out_idx.tolist(), rel.in_idx.tolist()):
        fp.write(json.dumps([o, i], separators=(",", ":")))
        fp.write("\n")


def write_csv(rel: LineageRelation, fp: IO[str]) -> None:
    cols = [f"b_{j + 1}" for j in range(rel.out_array.dim)] + [f"a_{i + 1}" for i in range(rel.in_array.dim)]
    fp.write(",".join(cols) + "\n")
    body = rel.matrix()
    if len(body):
        np.savetxt(fp, body, fmt="%d", delimiter=",")


def cells_to_matrix(cells: Sequence[Sequence[int]], dim: int) -> np.ndarray:
    return _as_matrix([tuple(c) for c in cells], dim)
