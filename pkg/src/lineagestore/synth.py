"""
Synthetic lineage generators and the brute-force reference query.

Generators produce exact ground-truth relations for common array
operations; nothing here executes arithmetic on array values except where
lineage is value dependent (sort, value filter, group-by, key join), where
seeded draws only exist to induce lineage structure.

``brute_force_query`` is the oracle for the in-situ engine. It joins the
uncompressed relations row by row on linearized cell ids and shares no code
with :mod:`lineagestore.query`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ArrayMeta, LineageRelation
from .errors import ValidationError

DATA_INDEPENDENT = ("negation", "addition", "aggregate", "tile", "matvec", "matmul", "dot", "window", "flip", "cross")
VALUE_DEPENDENT = ("sort", "value_filter", "groupby", "join")
KINDS = DATA_INDEPENDENT + VALUE_DEPENDENT

_N_INPUTS = {"addition": 2, "matvec": 2, "matmul": 2, "dot": 2, "join": 2}


@dataclass
class OpGenerator:
    kind: str
    shapes: list[tuple[int, ...]]
    params: dict = field(default_factory=dict)
    seed: int = 0
    in_ids: list[str] | None = None
    out_id: str = "Z"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown generator kind {self.kind!r}; choose from {', '.join(KINDS)}")
        self.shapes = [tuple(int(x) for x in s) for s in self.shapes]
        need = _N_INPUTS.get(self.kind, 1)
        if len(self.shapes) == 1 and need == 2:
            self.shapes = default_second_shape(self.kind, self.shapes[0])
        if len(self.shapes) != need:
            raise ValidationError(f"{self.kind} takes {need} input shape(s), got {len(self.shapes)}")
        if self.in_ids is None:
            self.in_ids = ["X", "Y"][:need] if need == 2 else ["X"]

    @property
    def n_inputs(self) -> int:
        return len(self.shapes)


def default_second_shape(kind, s):
    s = tuple(s)
    if kind == "addition":
        return [s, s]
    if kind == "matvec":
        return [s, (s[1],)]
    if kind == "matmul":
        return [s, (s[1], s[0])]
    if kind == "dot":
        return [s, s]
    if kind == "join":
        return [s, s]
    raise ValidationError(f"{kind}: cannot infer second input shape")


def grid(shape) -> np.ndarray:
    """All 1-based index tuples of ``shape`` in C order, as ``(N, d)``."""
    shape = tuple(int(x) for x in shape)
    idx = np.indices(shape, dtype=np.int64).reshape(len(shape), -1).T
    return idx + 1


def _rel(out_shape, in_shape, out_idx, in_idx, out_id, in_id):
    return LineageRelation.from_arrays(ArrayMeta(out_id, out_shape), ArrayMeta(in_id, in_shape), out_idx, in_idx)


def screened_permutation(n: int, rng: np.random.Generator) -> np.ndarray:
    """Random 0-based permutation with no ``p[i+1] == p[i] + 1`` (nothing
    ProvRC could merge). Lengths below 4 may not admit one; those return the
    best effort after a bounded number of fixes."""
    p = rng.permutation(n)
    for _ in range(1000):
        bad = np.flatnonzero(p[1:] == p[:-1] + 1)
        if bad.size == 0:
            break
        for b in bad:
            k = int(rng.integers(n))
            p[b + 1], p[k] = p[k], p[b + 1]
    return p


def generate(g: OpGenerator) -> list[LineageRelation]:
    """Ground-truth lineage, one relation per input array (input order)."""
    fn = _GENERATORS[g.kind]
    rng = np.random.default_rng(np.random.SeedSequence(int(g.seed)))
    return fn(g, rng)


def _negation(g, rng):
    s = g.shapes[0]
    idx = grid(s)
    return [_rel(s, s, idx, idx, g.out_id, g.in_ids[0])]


def _addition(g, rng):
    s = g.shapes[0]
    if g.shapes[1] != s:
        raise ValidationError("addition: input shapes must match")
    idx = grid(s)
    return [_rel(s, s, idx, idx, g.out_id, iid) for iid in g.in_ids]


def _aggregate(g, rng):
    s = g.shapes[0]
    axis = int(g.params.get("axis", len(s) - 1)) % len(s)
    keep = bool(g.params.get("keepdims", False))
    idx = grid(s)
    if keep:
        out = idx.copy()
        out[:, axis] = 1
        out_shape = tuple(1 if k == axis else d for k, d in enumerate(s))
    elif len(s) == 1:
        out = np.ones((idx.shape[0], 1), dtype=np.int64)
        out_shape = (1,)
    else:
        out = np.delete(idx, axis, axis=1)
        out_shape = tuple(d for k, d in enumerate(s) if k != axis)
    return [_rel(out_shape, s, out, idx, g.out_id, g.in_ids[0])]


def _tile(g, rng):
    s = g.shapes[0]
    reps = tuple(int(r) for r in g.params.get("reps", (2,) * len(s)))
    if len(reps) != len(s) or any(r < 1 for r in reps):
        raise ValidationError("tile: reps must give one positive count per axis")
    out_shape = tuple(d * r for d, r in zip(s, reps))
    out = grid(out_shape)
    ext = np.asarray(s, dtype=np.int64)
    inn = (out - 1) % ext + 1
    return [_rel(out_shape, s, out, inn, g.out_id, g.in_ids[0])]


def _matvec(g, rng):
    (n, m), v = g.shapes
    if v != (m,):
        raise ValidationError("matvec: expects (n, m) and (m,)")
    i = np.repeat(np.arange(1, n + 1), m)
    k = np.tile(np.arange(1, m + 1), n)
    r1 = _rel((n,), (n, m), i[:, None], np.stack([i, k], 1), g.out_id, g.in_ids[0])
    r2 = _rel((n,), (m,), i[:, None], k[:, None], g.out_id, g.in_ids[1])
    return [r1, r2]


def _matmul(g, rng):
    (n, m), (m2, k) = g.shapes
    if m != m2:
        raise ValidationError("matmul: inner extents differ")
    ii, jj, tt = (x.ravel() + 1 for x in np.indices((n, k, m), dtype=np.int64))
    out = np.stack([ii, jj], 1)
    r1 = _rel((n, k), (n, m), out, np.stack([ii, tt], 1), g.out_id, g.in_ids[0])
    r2 = _rel((n, k), (m, k), out, np.stack([tt, jj], 1), g.out_id, g.in_ids[1])
    return [r1, r2]


def _dot(g, rng):
    (n,), (n2,) = g.shapes
    if n != n2:
        raise ValidationError("dot: vector lengths differ")
    a = np.arange(1, n + 1)[:, None]
    one = np.ones((n, 1), dtype=np.int64)
    return [_rel((1,), (n,), one, a, g.out_id, iid) for iid in g.in_ids]


def _window(g, rng):
    s = g.shapes[0]
    w = int(g.params.get("radius", 1))
    out = grid(s)
    offs = grid((2 * w + 1,) * len(s)) - 1 - w
    o = np.repeat(out, offs.shape[0], axis=0)
    inn = o + np.tile(offs, (out.shape[0], 1))
    ok = np.all((inn >= 1) & (inn <= np.asarray(s)), axis=1)
    return [_rel(s, s, o[ok], inn[ok], g.out_id, g.in_ids[0])]


def _flip(g, rng):
    s = g.shapes[0]
    axis = int(g.params.get("axis", len(s) - 1)) % len(s)
    out = grid(s)
    inn = out.copy()
    inn[:, axis] = s[axis] + 1 - out[:, axis]
    return [_rel(s, s, out, inn, g.out_id, g.in_ids[0])]


def _cross(g, rng):
    # trailing extent 2: every output cell of a row reads the whole input row
    # trailing extent 3: output (i, j) reads the two other components (i, k), k != j
    s = g.shapes[0]
    if len(s) != 2 or s[1] not in (2, 3):
        raise ValidationError("cross: expects shape (n, 2) or (n, 3)")
    n, t = s
    rows_o, rows_i = [], []
    i = np.arange(1, n + 1)
    for j in range(1, t + 1):
        for k in range(1, t + 1):
            if t == 2 or k != j:
                rows_o.append(np.stack([i, np.full(n, j)], 1))
                rows_i.append(np.stack([i, np.full(n, k)], 1))
    return [_rel(s, s, np.concatenate(rows_o), np.concatenate(rows_i), g.out_id, g.in_ids[0])]


def _sort(g, rng):
    s = g.shapes[0]
    last = s[-1]
    lead = int(np.prod(s[:-1], dtype=np.int64)) if len(s) > 1 else 1
    out = grid(s)
    perms = np.concatenate([screened_permutation(last, rng) for _ in range(lead)]) + 1
    inn = out.copy()
    inn[:, -1] = perms
    return [_rel(s, s, out, inn, g.out_id, g.in_ids[0])]


def _value_filter(g, rng):
    s = g.shapes[0]
    vals = rng.random(int(np.prod(s)))
    keep = vals > vals.mean()
    idx = grid(s)[keep]
    return [_rel(s, s, idx, idx, g.out_id, g.in_ids[0])]


def _keys(rng, n, k):
    return rng.integers(0, k, size=n)


def _groupby(g, rng):
    s = g.shapes[0]
    if len(s) != 2:
        raise ValidationError("groupby: expects a 2-D table (rows, columns)")
    n, c = s
    keys = _keys(rng, n, int(g.params.get("keys", 16)))
    uniq, grp = np.unique(keys, return_inverse=True)
    r = np.repeat(np.arange(1, n + 1), c)
    col = np.tile(np.arange(1, c + 1), n)
    out = np.stack([np.repeat(grp + 1, c), col], 1)
    return [_rel((uniq.shape[0], c), s, out, np.stack([r, col], 1), g.out_id, g.in_ids[0])]


def _join(g, rng):
    (n1, c1), (n2, c2) = g.shapes
    k = int(g.params.get("keys", 16))
    kl = _keys(rng, n1, k)
    kr = _keys(rng, n2, k)
    li, ri = np.nonzero(kl[:, None] == kr[None, :])
    if li.size == 0:
        li, ri = np.array([0]), np.array([0])  # keep the output non-empty
    pcount = li.shape[0]
    out_shape = (pcount, c1 + c2)
    prow = np.arange(1, pcount + 1)
    o1 = np.stack([np.repeat(prow, c1), np.tile(np.arange(1, c1 + 1), pcount)], 1)
    i1 = np.stack([np.repeat(li + 1, c1), np.tile(np.arange(1, c1 + 1), pcount)], 1)
    o2 = np.stack([np.repeat(prow, c2), np.tile(np.arange(c1 + 1, c1 + c2 + 1), pcount)], 1)
    i2 = np.stack([np.repeat(ri + 1, c2), np.tile(np.arange(1, c2 + 1), pcount)], 1)
    return [_rel(out_shape, (n1, c1), o1, i1, g.out_id, g.in_ids[0]),
            _rel(out_shape, (n2, c2), o2, i2, g.out_id, g.in_ids[1])]


_GENERATORS = {
    "negation": _negation, "addition": _addition, "aggregate": _aggregate, "tile": _tile,
    "matvec": _matvec, "matmul": _matmul, "dot": _dot, "window": _window, "flip": _flip, "cross": _cross,
    "sort": _sort, "value_filter": _value_filter, "groupby": _groupby, "join": _join,
}


# ---------------------------------------------------------------------------
# reference query
# ---------------------------------------------------------------------------


def _linear(idx: np.ndarray, shape) -> np.ndarray:
    if idx.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return np.ravel_multi_index(tuple((idx - 1).T), tuple(shape)).astype(np.int64)


def brute_force_query(relations: Sequence[LineageRelation], cells, path: Sequence[str]) -> np.ndarray:
    """Cells of ``path[-1]`` linked to ``cells`` of ``path[0]``.

    ``relations[k]`` must connect ``path[k]`` and ``path[k+1]`` in either
    direction. Returns a sorted ``(N, d)`` array of unique 1-based indices.
    """
    if len(relations) != len(path) - 1 or len(path) < 2:
        raise ValidationError("path must have exactly one relation per hop")
    first = relations[0]
    shape0 = first.out_array.shape if first.out_array.id == path[0] else first.in_array.shape
    cur = np.asarray(cells, dtype=np.int64).reshape(-1, len(shape0))
    cur_lin = np.unique(_linear(cur, shape0))
    shape = shape0
    for rel, src, dst in zip(relations, path[:-1], path[1:]):
        if rel.out_array.id == src and rel.in_array.id == dst:
            s_idx, s_shape, d_idx, d_shape = rel.out_idx, rel.out_array.shape, rel.in_idx, rel.in_array.shape
        elif rel.in_array.id == src and rel.out_array.id == dst:
            s_idx, s_shape, d_idx, d_shape = rel.in_idx, rel.in_array.shape, rel.out_idx, rel.out_array.shape
        else:
            raise ValidationError(f"broken chain: relation {rel.in_array.id}->{rel.out_array.id} "
                                  f"does not connect {src} and {dst}")
        if tuple(s_shape) != tuple(shape):
            raise ValidationError(f"broken chain: shape of {src} differs between hops")
        hit = np.isin(_linear(s_idx, s_shape), cur_lin)
        cur_lin = np.unique(_linear(d_idx[hit], d_shape))
        shape = d_shape
    if cur_lin.size == 0:
        return np.zeros((0, len(shape)), dtype=np.int64)
    return np.stack(np.unravel_index(cur_lin, tuple(shape)), axis=1).astype(np.int64) + 1


# ---------------------------------------------------------------------------
# pipelines
# ---------------------------------------------------------------------------


@dataclass
class Step:
    gen: OpGenerator
    relations: list[LineageRelation]

    @property
    def primary(self) -> LineageRelation:
        return self.relations[0]


@dataclass
class Pipeline:
    """Chain ``X0 -> X1 -> ... -> Xn``; each step's first input is the
    previous step's output. Side inputs are fresh arrays ``S<k>``."""

    steps: list[Step]

    @property
    def path(self) -> list[str]:
        return [self.steps[0].primary.in_array.id] + [s.primary.out_array.id for s in self.steps]

    @property
    def primary_relations(self) -> list[LineageRelation]:
        return [s.primary for s in self.steps]

    def arrays(self) -> dict[str, tuple[int, ...]]:
        out = {}
        for s in self.steps:
            for r in s.relations:
                out[r.in_array.id] = r.in_array.shape
                out[r.out_array.id] = r.out_array.shape
        return out


STRUCTURED_POOL = ("negation", "addition", "window", "aggregate", "flip")
RANDOM_POOL = ("negation", "addition", "window", "aggregate", "flip", "sort", "value_filter", "tile", "matmul")


def build_pipeline(kinds: Sequence[str], shape, seed: int = 0, params: dict | None = None) -> Pipeline:
    """Chain explicit kinds starting from an array of ``shape``.

    A kind may be given as ``(kind, params)``. ``aggregate`` keeps
    dimensions; ``tile`` broadcasts any unit axes back to the starting
    extents (or doubles the first axis when none).
    """
    params = params or {}
    rng = np.random.default_rng(seed)
    shape0 = tuple(shape)
    cur = tuple(shape)
    steps: list[Step] = []
    for k, kind in enumerate(kinds):
        step_params = {}
        if not isinstance(kind, str):
            kind, step_params = kind
        in_id, out_id = f"X{k}", f"X{k + 1}"
        p = dict(params.get(kind, {}))
        p.update(step_params)
        shapes = [cur]
        ids = [in_id]
        if kind in ("addition", "matmul"):
            shapes = default_second_shape(kind, cur)
            if kind == "matmul":
                shapes = [cur, (cur[-1], cur[-1])]
            ids = [in_id, f"S{k + 1}"]
        if kind == "flip":
            p.setdefault("axis", int(rng.integers(len(cur))))
        if kind == "aggregate":
            p.setdefault("keepdims", True)
            axes = [a for a, d in enumerate(cur) if d > 1]
            p.setdefault("axis", int(rng.choice(axes)) if axes else 0)
        if kind == "tile":
            if "reps" not in p:
                reps = [shape0[a] if cur[a] == 1 and len(cur) == len(shape0) else 1 for a in range(len(cur))]
                if all(r == 1 for r in reps):
                    reps[0] = 2
                p["reps"] = tuple(reps)
        g = OpGenerator(kind, shapes, p, seed=int(rng.integers(2**63)), in_ids=ids, out_id=out_id)
        rels = generate(g)
        steps.append(Step(g, rels))
        cur = rels[0].out_array.shape
    return Pipeline(steps)


def random_pipeline(n_ops: int, shape, seed: int = 0, pool: Sequence[str] = RANDOM_POOL,
                    max_cells: int | None = None) -> Pipeline:
    """Random chain of ``n_ops`` kinds. An ``aggregate`` is always followed by
    a ``tile`` that restores the shape, and ``tile`` is only drawn when it
    keeps the array within ``max_cells`` (default: 4x the start size)."""
    rng = np.random.default_rng(seed)
    start = int(np.prod(shape))
    max_cells = max_cells or 4 * start
    kinds: list[str] = []
    cells = start
    while len(kinds) < n_ops:
        if kinds and kinds[-1] == "aggregate":
            kinds.append("tile")
            cells = start
            continue
        choices = [k for k in pool if k != "tile" or cells * 2 <= max_cells]
        if len(kinds) == n_ops - 1:
            choices = [k for k in choices if k != "aggregate"] or choices
        k = str(rng.choice(choices))
        if k == "tile":
            cells *= 2
        kinds.append(k)
    return build_pipeline(kinds, shape, seed=int(rng.integers(2**31)))


def structured_pipeline(n_ops: int, shape, seed: int = 0) -> Pipeline:
    """Data-independent chain shaped like an image workflow: flips along two
    axes, a windowed filter, and ``n_ops - 3`` further draws from negation,
    addition, window and aggregate (each aggregate is followed by the tile
    that restores the shape), in random order."""
    if n_ops < 3:
        raise ValidationError("structured pipelines need at least 3 operations")
    rng = np.random.default_rng(seed)
    d = len(shape)
    units: list[list] = [[("flip", {"axis": 0})], [("flip", {"axis": d - 1})], [("window", {})]]
    left = n_ops - 3
    while left > 0:
        k = str(rng.choice(["negation", "addition", "window", "aggregate"]))
        if k == "aggregate":
            if left < 2:
                continue
            units.append([("aggregate", {}), ("tile", {})])
            left -= 2
        else:
            units.append([(k, {})])
            left -= 1
    order = rng.permutation(len(units))
    kinds = [step for i in order for step in units[i]]
    return build_pipeline(kinds, shape, seed=int(rng.integers(2**31)))


def random_query_cells(shape, rng: np.random.Generator, selectivity: float | None = None, mode: str | None = None):
    """Query cells over ``shape``: a contiguous run in C order (``range``),
    an axis-aligned box (``box``) or scattered cells (``scatter``)."""
    shape = tuple(shape)
    n = int(np.prod(shape))
    mode = mode or str(rng.choice(["range", "box", "scatter"]))
    if selectivity is None:
        selectivity = float(rng.uniform(0.001, 0.1))
    size = max(1, int(round(selectivity * n)))
    if mode == "range":
        start = int(rng.integers(0, n - size + 1))
        lin = np.arange(start, start + size)
    elif mode == "scatter":
        lin = np.sort(rng.choice(n, size=min(size, n), replace=False))
    elif mode == "box":
        side = max(1, int(round(size ** (1 / len(shape)))))
        lo = [int(rng.integers(0, max(1, d - min(side, d) + 1))) for d in shape]
        sl = tuple(slice(l, l + min(side, d)) for l, d in zip(lo, shape))
        lin = np.arange(n).reshape(shape)[sl].ravel()
    else:
        raise ValidationError(f"unknown query mode {mode!r}")
    return np.stack(np.unravel_index(lin, shape), axis=1).astype(np.int64) + 1
