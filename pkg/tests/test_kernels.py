"""The numba and numpy kernels must agree exactly."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lineagestore import kernels, query
from lineagestore.provrc import BACKWARD, FORWARD, compress
from strategies import relations

pytestmark = pytest.mark.skipif(not kernels.NUMBA_AVAILABLE, reason="numba not installed")

seeds = st.integers(0, 2**32 - 1)


def ranges(rng, n, span=40, width=4):
    lo = rng.integers(-5, span, n)
    return lo, lo + rng.integers(0, width, n)


def boxes(rng, n, d):
    lo = rng.integers(1, 12, (n, d))
    return lo, lo + rng.integers(0, 4, (n, d))


@given(seeds, st.integers(0, 60), st.booleans())
def test_run_starts(seed, n, overlap):
    rng = np.random.default_rng(seed)
    lo = np.sort(rng.integers(0, 30, n))
    hi = lo + rng.integers(0, 3, n)
    same = rng.random(n) < 0.8
    a = kernels.run_starts_numpy(same, lo, hi, overlap)
    b = kernels.run_starts_numba(same, lo, hi, overlap)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


@given(seeds, st.integers(0, 50))
def test_expand_ranges(seed, n):
    rng = np.random.default_rng(seed)
    lo, hi = ranges(rng, n, width=5)
    hi = hi - 1  # include some empty ranges
    a = kernels.expand_ranges_numpy(lo, hi)
    b = kernels.expand_ranges_numba(lo, hi)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert a[0].shape[0] == int(np.maximum(hi - lo + 1, 0).sum())


@given(seeds, st.integers(0, 40), st.integers(0, 40))
def test_interval_join(seed, na, nb):
    rng = np.random.default_rng(seed)
    a_lo, a_hi = ranges(rng, na)
    b_lo, b_hi = ranges(rng, nb)
    i1, j1 = kernels.interval_join_numpy(a_lo, a_hi, b_lo, b_hi)
    i2, j2 = kernels.interval_join_numba(a_lo, a_hi, b_lo, b_hi)
    assert np.array_equal(i1, i2) and np.array_equal(j1, j2)
    want = {(i, j) for i in range(na) for j in range(nb) if a_lo[i] <= b_hi[j] and b_lo[j] <= a_hi[i]}
    assert set(zip(i1.tolist(), j1.tolist())) == want


def covered(lo, hi):
    out = set()
    for l, h in zip(lo.tolist(), hi.tolist()):
        grid = np.stack(np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(l, h)], indexing="ij"), -1)
        out |= set(map(tuple, grid.reshape(-1, len(l)).tolist()))
    return out


@given(seeds, st.integers(0, 40), st.integers(1, 3), st.integers(0, 3))
@settings(max_examples=80)
def test_merge_boxes(seed, n, d, rounds):
    rng = np.random.default_rng(seed)
    lo, hi = boxes(rng, n, d)
    a = kernels.merge_boxes_numpy(lo, hi, rounds)
    b = kernels.merge_boxes_numba(lo, hi, rounds)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert covered(*a) == covered(lo, hi)
    assert a[0].shape[0] <= n


@given(seeds, st.integers(0, 30), st.integers(1, 3))
@settings(max_examples=80)
def test_canon_boxes(seed, n, d):
    rng = np.random.default_rng(seed)
    lo, hi = boxes(rng, n, d)
    a = kernels.canon_boxes_numpy(lo, hi)
    b = kernels.canon_boxes_numba(lo, hi)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    cells = covered(*a)
    assert cells == covered(lo, hi)
    assert sum(int(np.prod(h - l + 1)) for l, h in zip(*a)) == len(cells)  # disjoint


@given(relations(max_rows=120), seeds)
@settings(max_examples=80)
def test_fused_hop_matches_operator_chain(rel, seed):
    rng = np.random.default_rng(seed)
    for d in (BACKWARD, FORWARD):
        t = compress(rel, d)
        arr = t.key_array
        n = int(rng.integers(1, 6))
        lo = np.stack([rng.integers(1, s + 1, n) for s in arr.shape], 1)
        hi = np.minimum(lo + rng.integers(0, 3, lo.shape), np.asarray(arr.shape))
        q = query.Boxes(arr, lo, hi)
        saved = kernels.USE_NUMBA
        try:
            kernels.USE_NUMBA = True
            fast = query.canonicalize(query.hop(q, t)[0])
            kernels.USE_NUMBA = False
            slow = query.canonicalize(query.hop(q, t)[0])
        finally:
            kernels.USE_NUMBA = saved
        assert np.array_equal(fast.lo, slow.lo) and np.array_equal(fast.hi, slow.hi)


BACKEND_PROBE = r"""
import json, numpy as np
from lineagestore import kernels, synth, query
from lineagestore.provrc import compress, FORWARD
pl = synth.structured_pipeline(4, (30, 30), seed=5)
src = query.TableList([compress(r, FORWARD) for r in pl.primary_relations])
res = query.prov_query(query.QuerySpec(pl.path, [[[3, 9], [2, 20]]]), src)
print(json.dumps({"backend": kernels.BACKEND, "records": res.records()}))
"""


def test_env_switch_selects_backend():
    out = {}
    for flag in ("0", "1"):
        env = dict(os.environ, LINEAGESTORE_NUMBA=flag)
        p = subprocess.run([sys.executable, "-c", BACKEND_PROBE], env=env, capture_output=True, text=True, check=True)
        out[flag] = json.loads(p.stdout.strip().splitlines()[-1])
    assert out["0"]["backend"] == "numpy" and out["1"]["backend"] == "numba"
    assert out["0"]["records"] == out["1"]["records"]
