"""
Time each hot kernel under both backends, plus end-to-end compression and
queries with the numba path on and off.

    python3 benchmarks/bench_kernels.py [--quick] [--json out.json]

The end-to-end numbers run in subprocesses because the backend is chosen
at import time from LINEAGESTORE_NUMBA.
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from lineagestore import kernels


def best_of(fn, reps):
    fn()  # warm-up (and JIT compile)
    ts = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return min(ts)


def kernel_cases(n, rng):
    lo = np.sort(rng.integers(1, n, n))
    hi = lo + rng.integers(0, 3, n)
    same = rng.random(n) < 0.9
    a_lo = rng.integers(1, n, n // 4)
    a_hi = a_lo + rng.integers(0, 8, a_lo.shape[0])
    boxes_lo = rng.integers(1, 200, (n // 4, 2))
    boxes_hi = boxes_lo + rng.integers(0, 4, boxes_lo.shape)
    return {
        "run_starts": lambda k: getattr(kernels, f"run_starts_{k}")(same, lo, hi, True),
        "expand_ranges": lambda k: getattr(kernels, f"expand_ranges_{k}")(lo[: n // 4], hi[: n // 4]),
        "interval_join": lambda k: getattr(kernels, f"interval_join_{k}")(a_lo, a_hi, lo, hi),
        "merge_boxes": lambda k: getattr(kernels, f"merge_boxes_{k}")(boxes_lo, boxes_hi),
        "canon_boxes": lambda k: getattr(kernels, f"canon_boxes_{k}")(boxes_lo[:2000], boxes_hi[:2000]),
    }


END_TO_END = r"""
import json, time, numpy as np
from lineagestore import synth, provrc, query
t0 = time.perf_counter()
pl = synth.structured_pipeline(5, (316, 316), seed=1)
tables = [provrc.compress(r, provrc.FORWARD) for r in pl.primary_relations]
t_comp = time.perf_counter() - t0
src = query.TableList(tables)
rng = np.random.default_rng(0)
qs = [synth.random_query_cells((316, 316), rng, 0.05, "range") for _ in range(11)]
query.prov_query(query.QuerySpec(pl.path, qs[0]), src)
ts = []
for c in qs[1:]:
    t0 = time.perf_counter(); query.prov_query(query.QuerySpec(pl.path, c), src); ts.append(time.perf_counter() - t0)
print(json.dumps({"compress_s": t_comp, "query_median_ms": 1e3 * float(np.median(ts))}))
"""


def end_to_end(flag):
    env = dict(os.environ, LINEAGESTORE_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", END_TO_END], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--json")
    args = ap.parse_args()
    n = 100_000 if args.quick else 1_000_000
    reps = 3 if args.quick else 5
    rng = np.random.default_rng(0)
    report = {"n": n, "kernels": {}}
    print(f"{'kernel':<16}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, fn in kernel_cases(n, rng).items():
        t_np = best_of(lambda: fn("numpy"), reps)
        t_nb = best_of(lambda: fn("numba"), reps)
        report["kernels"][name] = {"numpy_s": t_np, "numba_s": t_nb}
        print(f"{name:<16}{t_np * 1e3:>12.2f}{t_nb * 1e3:>12.2f}{t_np / t_nb:>9.1f}x")
    report["end_to_end"] = {"numpy": end_to_end("0"), "numba": end_to_end("1")}
    for k, v in report["end_to_end"].items():
        print(f"end-to-end {k:<6} compress {v['compress_s']:.2f} s, query median {v['query_median_ms']:.2f} ms")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(report, fh, indent=1)


if __name__ == "__main__":
    main()
