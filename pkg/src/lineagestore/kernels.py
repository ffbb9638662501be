"""
Hot integer kernels
===================

Every kernel exists twice: a numba ``@njit`` version and a pure-numpy
version with the same signature and results. The active backend is picked
once at import time:

* ``LINEAGESTORE_NUMBA=0`` forces the numpy path;
* otherwise numba is used when it can be imported.

Both variants stay importable (``*_numba`` / ``*_numpy``) so tests can
cross-check them and ``benchmarks/bench_kernels.py`` can time them.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("LINEAGESTORE_NUMBA", "1") != "0"
BACKEND = "numba" if USE_NUMBA else "numpy"


def _njit(fn):
    if not NUMBA_AVAILABLE:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


# ---------------------------------------------------------------------------
# run detection over sorted rows
# ---------------------------------------------------------------------------


def run_starts_numpy(same_prev, lo, hi, overlap):
    """Return start offsets of mergeable runs plus merged bounds.

    ``same_prev[i]`` says row ``i`` agrees with row ``i-1`` on every column
    except the one being merged (``same_prev[0]`` is ignored). Rows must be
    sorted by ``lo`` inside each agreeing segment. With ``overlap=False`` a
    run continues only when ``lo[i] == hi[i-1] + 1``; with ``overlap=True``
    it continues while ``lo[i]`` does not exceed the run's maximum ``hi`` + 1.
    """
    n = lo.shape[0]
    if n == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty.copy(), empty.copy()
    lo = np.asarray(lo, dtype=np.int64)
    hi = np.asarray(hi, dtype=np.int64)
    same = np.asarray(same_prev, dtype=np.bool_).copy()
    same[0] = False
    if not overlap:
        cont = np.zeros(n, dtype=np.bool_)
        cont[1:] = lo[1:] == hi[:-1] + 1
        new = ~(same & cont)
        starts = np.flatnonzero(new)
        ends = np.append(starts[1:], n) - 1
        return starts, lo[starts], hi[ends]
    # running max of hi inside each agreeing segment
    seg = np.cumsum(~same) - 1
    span = int(hi.max() - min(lo.min(), hi.min())) + 2
    shifted = hi - hi.min() + seg.astype(np.int64) * span
    runmax = np.maximum.accumulate(shifted) - seg.astype(np.int64) * span + hi.min()
    cont = np.zeros(n, dtype=np.bool_)
    cont[1:] = lo[1:] <= runmax[:-1] + 1
    new = ~(same & cont)
    starts = np.flatnonzero(new)
    ends = np.append(starts[1:], n) - 1
    return starts, lo[starts], runmax[ends]


def _run_starts_loop(same_prev, lo, hi, overlap):
    n = lo.shape[0]
    starts = np.empty(n, dtype=np.int64)
    mlo = np.empty(n, dtype=np.int64)
    mhi = np.empty(n, dtype=np.int64)
    k = -1
    cur_hi = 0
    for i in range(n):
        joined = False
        if i > 0 and same_prev[i]:
            if overlap:
                joined = lo[i] <= cur_hi + 1
            else:
                joined = lo[i] == hi[i - 1] + 1
        if joined:
            if hi[i] > cur_hi:
                cur_hi = hi[i]
        else:
            if k >= 0:
                mhi[k] = cur_hi
            k += 1
            starts[k] = i
            mlo[k] = lo[i]
            cur_hi = hi[i]
    if k >= 0:
        mhi[k] = cur_hi
    return starts[: k + 1], mlo[: k + 1], mhi[: k + 1]


_run_starts_jit = _njit(_run_starts_loop)


def run_starts_numba(same_prev, lo, hi, overlap):
    return _run_starts_jit(
        np.ascontiguousarray(same_prev, dtype=np.bool_),
        np.ascontiguousarray(lo, dtype=np.int64),
        np.ascontiguousarray(hi, dtype=np.int64),
        bool(overlap),
    )


# ---------------------------------------------------------------------------
# range expansion
# ---------------------------------------------------------------------------


def expand_ranges_numpy(lo, hi):
    """Expand inclusive ranges to ``(parent, value)`` arrays.

    ``parent[k]`` is the index of the range that produced ``value[k]``.
    Empty ranges (``hi < lo``) produce nothing.
    """
    lo = np.asarray(lo, dtype=np.int64)
    hi = np.asarray(hi, dtype=np.int64)
    counts = np.maximum(hi - lo + 1, 0)
    total = int(counts.sum())
    parent = np.repeat(np.arange(lo.shape[0], dtype=np.int64), counts)
    offsets = np.cumsum(counts) - counts
    values = lo[parent] + (np.arange(total, dtype=np.int64) - offsets[parent])
    return parent, values


def _expand_loop(lo, hi):
    n = lo.shape[0]
    total = 0
    for i in range(n):
        c = hi[i] - lo[i] + 1
        if c > 0:
            total += c
    parent = np.empty(total, dtype=np.int64)
    values = np.empty(total, dtype=np.int64)
    k = 0
    for i in range(n):
        for v in range(lo[i], hi[i] + 1):
            parent[k] = i
            values[k] = v
            k += 1
    return parent, values


_expand_jit = _njit(_expand_loop)


def expand_ranges_numba(lo, hi):
    return _expand_jit(
        np.ascontiguousarray(lo, dtype=np.int64),
        np.ascontiguousarray(hi, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# interval overlap join
# ---------------------------------------------------------------------------


def interval_join_numpy(a_lo, a_hi, b_lo, b_hi):
    """All index pairs ``(i, j)`` whose intervals ``a[i]`` and ``b[j]`` overlap.

    Output-sensitive: each overlapping pair is found exactly once, either
    because ``b[j]`` starts inside ``a[i]`` or because ``a[i]`` starts
    strictly inside ``b[j]``. Pairs come back sorted by ``(i, j)``.
    """
    a_lo = np.asarray(a_lo, dtype=np.int64)
    a_hi = np.asarray(a_hi, dtype=np.int64)
    b_lo = np.asarray(b_lo, dtype=np.int64)
    b_hi = np.asarray(b_hi, dtype=np.int64)
    ob = np.argsort(b_lo, kind="stable")
    oa = np.argsort(a_lo, kind="stable")
    sb = b_lo[ob]
    sa = a_lo[oa]
    # case 1: a.lo <= b.lo <= a.hi
    s = np.searchsorted(sb, a_lo, "left")
    e = np.searchsorted(sb, a_hi, "right")
    p1, k1 = expand_ranges_numpy(s, e - 1)
    i1, j1 = p1, ob[k1]
    # case 2: b.lo < a.lo <= b.hi
    s = np.searchsorted(sa, b_lo, "right")
    e = np.searchsorted(sa, b_hi, "right")
    p2, k2 = expand_ranges_numpy(s, e - 1)
    i2, j2 = oa[k2], p2
    ii = np.concatenate([i1, i2])
    jj = np.concatenate([j1, j2])
    order = np.lexsort((jj, ii))
    return ii[order], jj[order]


def _join_loop(a_lo, a_hi, b_lo, b_hi, oa, ob, sa, sb):
    na = a_lo.shape[0]
    nb = b_lo.shape[0]
    total = 0
    for i in range(na):
        s = np.searchsorted(sb, a_lo[i], "left")
        e = np.searchsorted(sb, a_hi[i], "right")
        total += e - s
    for j in range(nb):
        s = np.searchsorted(sa, b_lo[j], "right")
        e = np.searchsorted(sa, b_hi[j], "right")
        total += e - s
    ii = np.empty(total, dtype=np.int64)
    jj = np.empty(total, dtype=np.int64)
    k = 0
    for i in range(na):
        s = np.searchsorted(sb, a_lo[i], "left")
        e = np.searchsorted(sb, a_hi[i], "right")
        for t in range(s, e):
            ii[k] = i
            jj[k] = ob[t]
            k += 1
    for j in range(nb):
        s = np.searchsorted(sa, b_lo[j], "right")
        e = np.searchsorted(sa, b_hi[j], "right")
        for t in range(s, e):
            ii[k] = oa[t]
            jj[k] = j
            k += 1
    return ii, jj


_join_jit = _njit(_join_loop)


def interval_join_numba(a_lo, a_hi, b_lo, b_hi):
    a_lo = np.ascontiguousarray(a_lo, dtype=np.int64)
    a_hi = np.ascontiguousarray(a_hi, dtype=np.int64)
    b_lo = np.ascontiguousarray(b_lo, dtype=np.int64)
    b_hi = np.ascontiguousarray(b_hi, dtype=np.int64)
    oa = np.argsort(a_lo, kind="stable")
    ob = np.argsort(b_lo, kind="stable")
    ii, jj = _join_jit(a_lo, a_hi, b_lo, b_hi, oa, ob, a_lo[oa], b_lo[ob])
    order = np.lexsort((jj, ii))
    return ii[order], jj[order]


# ---------------------------------------------------------------------------
# box merging
# ---------------------------------------------------------------------------


def _row_order_numpy(lo, hi):
    cols = [hi[:, k] for k in range(hi.shape[1] - 1, -1, -1)] + [lo[:, k] for k in range(lo.shape[1] - 1, -1, -1)]
    return np.lexsort(cols)


def _dedupe_numpy(lo, hi):
    n = lo.shape[0]
    if n < 2:
        return lo, hi
    order = _row_order_numpy(lo, hi)
    lo, hi = lo[order], hi[order]
    keep = np.ones(n, dtype=bool)
    keep[1:] = np.any(lo[1:] != lo[:-1], axis=1) | np.any(hi[1:] != hi[:-1], axis=1)
    if keep.all():
        return lo, hi
    return lo[keep], hi[keep]


def _merge_axis_numpy(lo, hi, v):
    n, d = lo.shape
    others = []
    for k in range(d):
        if k != v:
            others += [lo[:, k], hi[:, k]]
    order = np.lexsort(([hi[:, v], lo[:, v]] + others[::-1]))
    same = np.ones(n, dtype=bool)
    for c in others:
        s = c[order]
        same[1:] &= s[1:] == s[:-1]
    same[0] = False
    starts, rlo, rhi = run_starts_numpy(same, lo[order, v], hi[order, v], True)
    keep = order[starts]
    nlo, nhi = lo[keep], hi[keep]
    nlo[:, v] = rlo
    nhi[:, v] = rhi
    return nlo, nhi


def merge_boxes_numpy(lo, hi, rounds=1):
    """Union-preserving merge of boxes ``(N, d)``.

    Deduplicates, then repeatedly merges rows that agree on every axis but
    one and whose ranges on that axis overlap or touch, axes visited last to
    first. ``rounds`` caps the number of full passes (``0``: until a pass
    changes nothing). Output rows are sorted by
    ``(lo_1..lo_d, hi_1..hi_d)``.
    """
    lo = np.array(lo, dtype=np.int64, copy=True)
    hi = np.array(hi, dtype=np.int64, copy=True)
    if lo.shape[0] == 0:
        return lo, hi
    lo, hi = _dedupe_numpy(lo, hi)
    d = lo.shape[1]
    rnd = 0
    while lo.shape[0] >= 2 and (rounds <= 0 or rnd < rounds):
        rnd += 1
        n0 = lo.shape[0]
        for v in range(d - 1, -1, -1):
            if lo.shape[0] < 2:
                break
            lo, hi = _merge_axis_numpy(lo, hi, v)
        if lo.shape[0] == n0:
            break
    order = _row_order_numpy(lo, hi)
    return np.ascontiguousarray(lo[order]), np.ascontiguousarray(hi[order])


def _lex_less(cols, a, b):
    for c in range(cols.shape[0]):
        x, y = cols[c, a], cols[c, b]
        if x != y:
            return x < y
    return False


def _lex_order(cols):
    """Stable lexicographic ordering of the columns of ``cols`` (``(k, n)``,
    most significant key first): sortedness check, then bottom-up merge
    sort."""
    n = cols.shape[1]
    order = np.arange(n)
    ordered = True
    for t in range(1, n):
        if _lex_less(cols, t, t - 1):
            ordered = False
            break
    if ordered:
        return order
    buf = np.empty(n, dtype=order.dtype)
    width = 1
    while width < n:
        for start in range(0, n, 2 * width):
            mid = min(start + width, n)
            end = min(start + 2 * width, n)
            i, j, k = start, mid, start
            while i < mid and j < end:
                if _lex_less(cols, order[j], order[i]):
                    buf[k] = order[j]
                    j += 1
                else:
                    buf[k] = order[i]
                    i += 1
                k += 1
            while i < mid:
                buf[k] = order[i]
                i += 1
                k += 1
            while j < end:
                buf[k] = order[j]
                j += 1
                k += 1
        order, buf = buf, order
        width *= 2
    return order


def _gather(x, idx, m):
    out = np.empty((m, x.shape[1]), dtype=x.dtype)
    for t in range(m):
        for k in range(x.shape[1]):
            out[t, k] = x[idx[t], k]
    return out


def _box_cols(lo, hi, v):
    """Sort key columns: every axis but ``v`` (lo, hi), then ``v``. With
    ``v = -1`` the order is ``lo_1..lo_d, hi_1..hi_d``."""
    n, d = lo.shape
    cols = np.empty((2 * d, n), dtype=np.int64)
    if v < 0:
        for t in range(n):
            for k in range(d):
                cols[k, t] = lo[t, k]
                cols[d + k, t] = hi[t, k]
        return cols
    for t in range(n):
        c = 0
        for k in range(d):
            if k != v:
                cols[c, t] = lo[t, k]
                cols[c + 1, t] = hi[t, k]
                c += 2
        cols[c, t] = lo[t, v]
        cols[c + 1, t] = hi[t, v]
    return cols


def _merge_boxes_loop(lo, hi, rounds):
    n, d = lo.shape
    order = _lex_order(_box_cols(lo, hi, -1))
    sel = np.empty(n, dtype=np.int64)
    m = 0
    for t in range(n):
        a = order[t]
        dup = False
        if t > 0:
            b = order[t - 1]
            dup = True
            for k in range(d):
                if lo[a, k] != lo[b, k] or hi[a, k] != hi[b, k]:
                    dup = False
                    break
        if not dup:
            sel[m] = a
            m += 1
    lo = _gather(lo, sel, m)
    hi = _gather(hi, sel, m)
    rnd = 0
    while lo.shape[0] >= 2 and (rounds <= 0 or rnd < rounds):
        rnd += 1
        n0 = lo.shape[0]
        for v in range(d - 1, -1, -1):
            m = lo.shape[0]
            if m < 2:
                break
            order = _lex_order(_box_cols(lo, hi, v))
            nlo = np.empty_like(lo)
            nhi = np.empty_like(hi)
            r = -1
            p = -1
            for t in range(m):
                i = order[t]
                joined = False
                if r >= 0:
                    same = True
                    for k in range(d):
                        if k != v and (lo[i, k] != lo[p, k] or hi[i, k] != hi[p, k]):
                            same = False
                            break
                    joined = same and lo[i, v] <= nhi[r, v] + 1
                if joined:
                    if hi[i, v] > nhi[r, v]:
                        nhi[r, v] = hi[i, v]
                else:
                    r += 1
                    for k in range(d):
                        nlo[r, k] = lo[i, k]
                        nhi[r, k] = hi[i, k]
                p = i
            lo = nlo[: r + 1]
            hi = nhi[: r + 1]
        if lo.shape[0] == n0:
            break
    m = lo.shape[0]
    order = _lex_order(_box_cols(lo, hi, -1))
    return _gather(lo, order, m), _gather(hi, order, m)


_gather = _njit(_gather)
_box_cols = _njit(_box_cols)
_lex_less = _njit(_lex_less)
_lex_order = _njit(_lex_order)
_merge_boxes_jit = _njit(_merge_boxes_loop)


def merge_boxes_numba(lo, hi, rounds=1):
    lo = np.ascontiguousarray(lo, dtype=np.int64)
    hi = np.ascontiguousarray(hi, dtype=np.int64)
    if lo.shape[0] == 0:
        return lo.copy(), hi.copy()
    return _merge_boxes_jit(lo.reshape(lo.shape[0], -1), hi.reshape(hi.shape[0], -1), int(rounds))


# ---------------------------------------------------------------------------
# fused query hop (numba only; the numpy path composes the query operators)
# ---------------------------------------------------------------------------


def _hop_loop(qlo, qhi, klo, khi, ob, sb, choice, vlo, vhi, rlo, rhi, ext, max_rows):
    nq, p = qlo.shape
    q = choice.shape[1]
    oa = np.argsort(qlo[:, 0], kind="mergesort")
    sa = qlo[oa, 0].copy()
    ii, jj = _join_jit(np.ascontiguousarray(qlo[:, 0]), np.ascontiguousarray(qhi[:, 0]),
                        np.ascontiguousarray(klo[:, 0]), np.ascontiguousarray(khi[:, 0]), oa, ob, sa, sb)
    cap = max(16, ii.shape[0])
    out_lo = np.empty((cap, q), dtype=np.int64)
    out_hi = np.empty((cap, q), dtype=np.int64)
    tlo = np.empty(p, dtype=np.int64)
    thi = np.empty(p, dtype=np.int64)
    refs = np.zeros(p, dtype=np.int64)
    split = np.zeros(p, dtype=np.bool_)
    cur = np.empty(p, dtype=np.int64)
    m = 0
    joined = 0
    for t in range(ii.shape[0]):
        i, r = ii[t], jj[t]
        ok = True
        for k in range(p):
            a = max(qlo[i, k], klo[r, k])
            b = min(qhi[i, k], khi[r, k])
            if a > b:
                ok = False
                break
            tlo[k] = a
            thi[k] = b
        if not ok:
            continue
        joined += 1
        if joined > max_rows:
            return out_lo[:0], out_hi[:0], -1
        refs[:] = 0
        for c in range(q):
            if choice[r, c] >= 0:
                refs[choice[r, c]] += 1
        for k in range(p):
            split[k] = refs[k] >= 2 and thi[k] > tlo[k]
            cur[k] = tlo[k]
        while True:
            if m >= cap:
                cap *= 2
                if cap > 2 * max_rows + 32:
                    return out_lo[:0], out_hi[:0], -1
                nlo = np.empty((cap, q), dtype=np.int64)
                nhi = np.empty((cap, q), dtype=np.int64)
                nlo[:m] = out_lo[:m]
                nhi[:m] = out_hi[:m]
                out_lo, out_hi = nlo, nhi
            valid = True
            for c in range(q):
                k = choice[r, c]
                if k < 0:
                    lo_, hi_ = vlo[r, c], vhi[r, c]
                elif split[k]:
                    lo_, hi_ = cur[k] + rlo[r, c, k], cur[k] + rhi[r, c, k]
                else:
                    lo_, hi_ = tlo[k] + rlo[r, c, k], thi[k] + rhi[r, c, k]
                if lo_ < 1:
                    lo_ = 1
                if hi_ > ext[c]:
                    hi_ = ext[c]
                if lo_ > hi_:
                    valid = False
                out_lo[m, c] = lo_
                out_hi[m, c] = hi_
            if valid:
                m += 1
            # advance the odometer over split keys
            k = p - 1
            while k >= 0:
                if split[k]:
                    if cur[k] < thi[k]:
                        cur[k] += 1
                        break
                    cur[k] = tlo[k]
                k -= 1
            if k < 0:
                break
    return out_lo[:m].copy(), out_hi[:m].copy(), joined


_hop_jit = _njit(_hop_loop)


def theta_hop_numba(qlo, qhi, klo, khi, ob, sb, choice, vlo, vhi, rlo, rhi, ext, max_rows):
    """One hop of the in-situ plan: overlap join of query boxes on every key
    axis, then absolute value ranges per joined pair (relative columns
    shifted by the intersected key range; keys that anchor several value
    attributes enumerated one index at a time), clipped to ``ext``.
    ``ob``/``sb`` are the table's order and sorted ``klo[:, 0]``. Returns
    ``(lo, hi, n_joined)``; ``n_joined == -1`` means ``max_rows`` was hit."""
    c = np.ascontiguousarray
    return _hop_jit(c(qlo), c(qhi), c(klo), c(khi), c(ob), c(sb), c(choice), c(vlo), c(vhi),
                    c(rlo), c(rhi), c(ext, dtype=np.int64), int(max_rows))


# ---------------------------------------------------------------------------
# canonical disjoint cover
# ---------------------------------------------------------------------------


def canon_boxes_numpy(lo, hi):
    """Disjoint canonical cover of a union of boxes: slabs along axis 0 cut
    wherever the cross-section changes; each cross-section is covered the
    same way recursively. The result depends only on the covered cells."""
    lo = np.asarray(lo, dtype=np.int64)
    hi = np.asarray(hi, dtype=np.int64)
    n, d = lo.shape
    if n == 0:
        return lo.copy(), hi.copy()
    if d == 1:
        order = np.argsort(lo[:, 0], kind="stable")
        same = np.ones(n, dtype=bool)
        _, rlo, rhi = run_starts_numpy(same, lo[order, 0], hi[order, 0], True)
        return rlo[:, None], rhi[:, None]
    bounds = np.unique(np.concatenate([lo[:, 0], hi[:, 0] + 1]))
    s = np.searchsorted(bounds, lo[:, 0])
    e = np.searchsorted(bounds, hi[:, 0] + 1)
    parent, seg = expand_ranges_numpy(s, e - 1)
    order = np.argsort(seg, kind="stable")
    parent, seg = parent[order], seg[order]
    cuts = np.flatnonzero(np.diff(seg)) + 1
    seg_ids = seg[np.append(0, cuts)]
    groups = np.split(parent, cuts)
    pieces = []
    prev_seg = -2
    for sid, rows in zip(seg_ids.tolist(), groups):
        slo, shi = canon_boxes_numpy(lo[rows, 1:], hi[rows, 1:])
        if pieces and sid == prev_seg + 1 and np.array_equal(pieces[-1][2], slo) and np.array_equal(pieces[-1][3], shi):
            pieces[-1][1] = int(bounds[sid + 1]) - 1
        else:
            pieces.append([int(bounds[sid]), int(bounds[sid + 1]) - 1, slo, shi])
        prev_seg = sid
    rlo = np.concatenate([np.hstack([np.full((a.shape[0], 1), x), a]) for x, _, a, _ in pieces])
    rhi = np.concatenate([np.hstack([np.full((b.shape[0], 1), y), b]) for _, y, _, b in pieces])
    return rlo, rhi


def _canon_loop(lo, hi):
    n, d = lo.shape
    if d == 1:
        order = np.argsort(lo[:, 0], kind="mergesort")
        rl = np.empty((n, 1), dtype=np.int64)
        rh = np.empty((n, 1), dtype=np.int64)
        m = -1
        for t in range(n):
            i = order[t]
            if m >= 0 and lo[i, 0] <= rh[m, 0] + 1:
                if hi[i, 0] > rh[m, 0]:
                    rh[m, 0] = hi[i, 0]
            else:
                m += 1
                rl[m, 0] = lo[i, 0]
                rh[m, 0] = hi[i, 0]
        return rl[: m + 1].copy(), rh[: m + 1].copy()
    b = np.empty(2 * n, dtype=np.int64)
    for t in range(n):
        b[2 * t] = lo[t, 0]
        b[2 * t + 1] = hi[t, 0] + 1
    bounds = np.unique(b)
    nseg = bounds.shape[0] - 1
    s = np.searchsorted(bounds, lo[:, 0])
    e = np.searchsorted(bounds, hi[:, 0] + 1)
    # rows covering each segment, CSR layout
    cnt = np.zeros(nseg + 1, dtype=np.int64)
    for t in range(n):
        for g in range(s[t], e[t]):
            cnt[g + 1] += 1
    for g in range(nseg):
        cnt[g + 1] += cnt[g]
    fill = cnt[:-1].copy()
    members = np.empty(cnt[nseg], dtype=np.int64)
    for t in range(n):
        for g in range(s[t], e[t]):
            members[fill[g]] = t
            fill[g] += 1
    out_lo = np.empty((0, d), dtype=np.int64)
    out_hi = np.empty((0, d), dtype=np.int64)
    plo = np.empty((0, d - 1), dtype=np.int64)
    phi = np.empty((0, d - 1), dtype=np.int64)
    have = False
    start = 0
    stop = 0
    prev = -2
    chunks_lo = []
    chunks_hi = []
    for g in range(nseg):
        k = cnt[g + 1] - cnt[g]
        if k == 0:
            continue
        sub_lo = np.empty((k, d - 1), dtype=np.int64)
        sub_hi = np.empty((k, d - 1), dtype=np.int64)
        for u in range(k):
            t = members[cnt[g] + u]
            for a in range(d - 1):
                sub_lo[u, a] = lo[t, a + 1]
                sub_hi[u, a] = hi[t, a + 1]
        clo, chi = _canon_loop(sub_lo, sub_hi)
        same = have and g == prev + 1 and clo.shape[0] == plo.shape[0]
        if same:
            for u in range(clo.shape[0]):
                for a in range(d - 1):
                    if clo[u, a] != plo[u, a] or chi[u, a] != phi[u, a]:
                        same = False
        if same:
            stop = bounds[g + 1] - 1
        else:
            if have:
                chunks_lo.append(_prefix(start, plo))
                chunks_hi.append(_prefix(stop, phi))
            have = True
            start = bounds[g]
            stop = bounds[g + 1] - 1
            plo, phi = clo, chi
        prev = g
    if have:
        chunks_lo.append(_prefix(start, plo))
        chunks_hi.append(_prefix(stop, phi))
    total = 0
    for c in chunks_lo:
        total += c.shape[0]
    out_lo = np.empty((total, d), dtype=np.int64)
    out_hi = np.empty((total, d), dtype=np.int64)
    r = 0
    for c in range(len(chunks_lo)):
        a, b2 = chunks_lo[c], chunks_hi[c]
        for u in range(a.shape[0]):
            for k in range(d):
                out_lo[r, k] = a[u, k]
                out_hi[r, k] = b2[u, k]
            r += 1
    return out_lo, out_hi


def _prefix(x, rest):
    m, d1 = rest.shape
    out = np.empty((m, d1 + 1), dtype=np.int64)
    for u in range(m):
        out[u, 0] = x
        for a in range(d1):
            out[u, a + 1] = rest[u, a]
    return out


_prefix = _njit(_prefix)
_canon_loop = _njit(_canon_loop)
_canon_jit = _canon_loop


def canon_boxes_numba(lo, hi):
    lo = np.ascontiguousarray(lo, dtype=np.int64)
    hi = np.ascontiguousarray(hi, dtype=np.int64)
    if lo.shape[0] == 0:
        return lo.copy(), hi.copy()
    return _canon_jit(lo, hi)


if USE_NUMBA:
    run_starts = run_starts_numba
    expand_ranges = expand_ranges_numba
    interval_join = interval_join_numba
    merge_boxes = merge_boxes_numba
    canon_boxes = canon_boxes_numba
else:
    run_starts = run_starts_numpy
    expand_ranges = expand_ranges_numpy
    interval_join = interval_join_numpy
    merge_boxes = merge_boxes_numpy
    canon_boxes = canon_boxes_numpy
