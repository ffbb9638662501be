"""
Latency benchmark: in-situ queries (merged and unmerged) against the
brute-force join over uncompressed relations.

A spec is a dict (or JSON/TOML file)::

    pipeline:  kind = structured | random | ops, n_ops, ops (for kind=ops),
               pool (for kind=random), shape, seed
    query:     direction = forward | backward, selectivity = [lo, hi],
               mode = range | box | scatter, n_queries
    systems:   subset of insitu, nomerge, brute
    timeout_s: wall-clock cap for the whole run
    check:     compare every in-situ answer with the brute-force one
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels, prc1, synth
from .catalog import raw_size
from .errors import LineageError, ValidationError
from .provrc import BACKWARD, FORWARD, compress
from .query import DEFAULT_MAX_ROWS, QuerySpec, TableList, prov_query

SYSTEMS = ("insitu", "nomerge", "brute")


class BenchTimeout(LineageError):
    pass


@dataclass
class BenchSpec:
    pipeline: dict
    query: dict = field(default_factory=dict)
    systems: list = field(default_factory=lambda: list(SYSTEMS))
    timeout_s: float = 600.0
    check: bool = True
    max_rows: int = DEFAULT_MAX_ROWS

    @classmethod
    def from_dict(cls, d: dict) -> "BenchSpec":
        unknown = set(d) - {"pipeline", "query", "systems", "timeout_s", "check", "max_rows"}
        if unknown:
            raise ValidationError(f"unknown bench spec keys: {', '.join(sorted(unknown))}")
        if "pipeline" not in d:
            raise ValidationError("bench spec needs a pipeline section")
        spec = cls(**d)
        bad = set(spec.systems) - set(SYSTEMS)
        if bad:
            raise ValidationError(f"unknown systems: {', '.join(sorted(bad))}")
        return spec


def build(pipe: dict) -> synth.Pipeline:
    kind = pipe.get("kind", "structured")
    shape = tuple(pipe.get("shape", (316, 316)))
    seed = int(pipe.get("seed", 0))
    if kind == "ops":
        ops = list(pipe.get("ops", []))
        if not ops:
            raise ValidationError("pipeline has no operations")
        return synth.build_pipeline(ops, shape, seed)
    n = int(pipe.get("n_ops", 5))
    if n < 1:
        raise ValidationError("pipeline has no operations")
    if kind == "structured":
        return synth.structured_pipeline(n, shape, seed)
    if kind == "random":
        pool = tuple(pipe.get("pool", synth.RANDOM_POOL))
        bad = set(pool) - set(synth.KINDS)
        if not pool or bad:
            raise ValidationError(f"bad random pipeline pool: {sorted(bad) or 'empty'}")
        return synth.random_pipeline(n, shape, seed, pool=pool)
    raise ValidationError(f"unknown pipeline kind {kind!r}")


def _stats(xs):
    a = np.asarray(xs, dtype=float) * 1e3
    return {"median_ms": float(np.median(a)), "mean_ms": float(a.mean()),
            "p90_ms": float(np.percentile(a, 90)), "n": int(a.size)}


def run(spec: BenchSpec | dict) -> dict:
    if isinstance(spec, dict):
        spec = BenchSpec.from_dict(spec)
    t_start = time.perf_counter()
    pl = build(spec.pipeline)
    rels = pl.primary_relations
    q = spec.query
    direction = q.get("direction", FORWARD)
    if direction not in (FORWARD, BACKWARD):
        raise ValidationError(f"direction must be forward or backward, got {direction!r}")
    path = pl.path if direction == FORWARD else pl.path[::-1]
    ordered = rels if direction == FORWARD else rels[::-1]

    t0 = time.perf_counter()
    tables = [compress(r, direction) for r in rels]
    compress_s = time.perf_counter() - t0
    stored = sum(len(prc1.serialize(t)) for t in tables)
    raw = sum(raw_size(len(r), r.out_array.dim, r.in_array.dim) for r in rels)
    src = TableList(tables)

    rng = np.random.default_rng(int(spec.pipeline.get("seed", 0)))
    sel = q.get("selectivity", [0.01, 0.1])
    lo_s, hi_s = (sel, sel) if np.isscalar(sel) else sel
    start_shape = tables[0].key_array.shape if direction == FORWARD else tables[-1].key_array.shape
    times = {s: [] for s in spec.systems}
    hop_rows = {s: [] for s in ("insitu", "nomerge") if s in spec.systems}
    mismatches = 0
    warm = synth.random_query_cells(start_shape, np.random.default_rng(0), lo_s, q.get("mode", "range"))
    for s in spec.systems:
        if s != "brute":
            prov_query(QuerySpec(path, warm, direction), src, merge=(s == "insitu"), max_rows=spec.max_rows)
    for _ in range(int(q.get("n_queries", 10))):
        cells = synth.random_query_cells(start_shape, rng, float(rng.uniform(lo_s, hi_s)), q.get("mode", "range"))
        answers = {}
        for s in spec.systems:
            t0 = time.perf_counter()
            if s == "brute":
                answers[s] = synth.brute_force_query(ordered, cells, path)
            else:
                res = prov_query(QuerySpec(path, cells, direction), src, merge=(s == "insitu"),
                                 max_rows=spec.max_rows)
                hop_rows[s].append([h["output_rows"] for h in res.stats["hops"]])
            times[s].append(time.perf_counter() - t0)
            if s != "brute" and spec.check:
                answers[s] = res.cells()
        if spec.check and "brute" in answers:
            mismatches += sum(not np.array_equal(a, answers["brute"]) for k, a in answers.items() if k != "brute")
        if time.perf_counter() - t_start > spec.timeout_s:
            raise BenchTimeout(f"benchmark exceeded {spec.timeout_s:g} s")

    report = {
        "pipeline": [s.gen.kind for s in pl.steps],
        "path": path,
        "direction": direction,
        "start_cells": int(np.prod(start_shape)),
        "backend": "numba" if kernels.USE_NUMBA else "numpy",
        "compress_s": compress_s,
        "storage": {"raw_bytes": raw, "stored_bytes": stored, "ratio_pct": 100.0 * stored / raw if raw else 0.0},
        "systems": {s: _stats(v) for s, v in times.items()},
        "hop_rows": {s: np.asarray(v).mean(axis=0).tolist() for s, v in hop_rows.items()},
        "mismatches": mismatches,
    }
    if "brute" in times:
        for s in ("insitu", "nomerge"):
            if s in times:
                report["systems"][s]["speedup_vs_brute"] = (report["systems"]["brute"]["median_ms"]
                                                            / report["systems"][s]["median_ms"])
    return report


def format_table(report: dict) -> str:
    lines = [f"pipeline: {' -> '.join(report['pipeline'])} ({report['direction']}, "
             f"{report['start_cells']} cells, {report['backend']})",
             f"storage: {report['storage']['stored_bytes']} B of {report['storage']['raw_bytes']} B raw "
             f"({report['storage']['ratio_pct']:.3f}%)",
             f"{'system':<10}{'median ms':>12}{'p90 ms':>12}{'speedup':>10}  rows per hop"]
    for s, st in report["systems"].items():
        sp = f"{st['speedup_vs_brute']:.1f}x" if "speedup_vs_brute" in st else "-"
        rows = " ".join(f"{r:.0f}" for r in report["hop_rows"].get(s, []))
        lines.append(f"{s:<10}{st['median_ms']:>12.3f}{st['p90_ms']:>12.3f}{sp:>10}  {rows}")
    if report["mismatches"]:
        lines.append(f"MISMATCHES: {report['mismatches']}")
    return "\n".join(lines)
