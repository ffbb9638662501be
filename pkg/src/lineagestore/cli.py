"""
Command-line entry point (``lineagestore``).

Data goes to stdout as JSON lines, reports as one JSON document. Logs,
stats blocks and human tables go to stderr. Exit codes: 0 success, 1 usage
or config error, 2 data/validation error, 3 I/O error.

The ingest stream is JSON lines ``[out_idx, in_idx]``. ``gen`` prefixes each
relation with a header object naming its arrays and operation, so that
``gen ... | ingest`` needs no further flags.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import synth
from .catalog import Catalog, EdgeKey
from .config import Config, ConfigError
from .core import ArrayMeta, LineageRelation, check, parse_csv_rows, parse_jsonl_rows, write_csv, write_jsonl
from .errors import LineageError, StorageError, ValidationError
from .provrc import DIRECTIONS
from .query import QuerySpec, prov_query
from .reuse import Registry, register_operation

log = logging.getLogger("lineagestore")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _dims(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(x) for x in text.replace("x", ",").split(",") if x.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}; use e.g. 3,2") from exc
    if not dims:
        raise argparse.ArgumentTypeError("empty shape")
    return dims


def _ids(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _json_arg(text: str | None, what: str):
    if text is None:
        return None
    src = text
    if not text.lstrip().startswith(("{", "[")) and Path(text).exists():
        src = Path(text).read_text()
    try:
        return json.loads(src)
    except ValueError as exc:
        raise ValidationError(f"{what} is not valid JSON: {exc}") from exc


def _emit(obj, out=None):
    out = out or sys.stdout
    out.write(json.dumps(obj, separators=(",", ":"), sort_keys=True))
    out.write("\n")


def _read_input(path: str | None) -> str:
    if path in (None, "-"):
        return sys.stdin.read()
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# ingest stream
# ---------------------------------------------------------------------------

def split_stream(text: str) -> list[tuple[dict | None, list[str]]]:
    """Split JSON lines into (header, row lines) blocks."""
    blocks: list[tuple[dict | None, list[str]]] = []
    for line in text.splitlines():
        s = line.strip()
        if not s:
            continue
        if s.startswith("{"):
            try:
                blocks.append((json.loads(s), []))
            except ValueError as exc:
                raise ValidationError(f"bad header line {s[:60]!r}") from exc
            continue
        if not blocks:
            blocks.append((None, []))
        blocks[-1][1].append(s)
    return blocks


def write_stream(rels, op_name, op_args, in_ids, out_ids, fp, fmt="jsonl"):
    for rel in rels:
        if fmt == "jsonl":
            _emit({"out": {"id": rel.out_array.id, "shape": list(rel.out_array.shape)},
                   "in": {"id": rel.in_array.id, "shape": list(rel.in_array.shape)},
                   "op": op_name, "args": op_args, "op_in": in_ids, "op_out": out_ids}, fp)
            write_jsonl(rel, fp)
        else:
            write_csv(rel, fp)


def _meta(cat: Catalog, d: dict) -> ArrayMeta:
    return cat.add_array(d["id"], tuple(d["shape"])) if "shape" in d else cat.array(d["id"])


def load_groups(cat: Catalog, text: str, args) -> list[dict]:
    """Parse an ingest stream into operation groups ready for registration."""
    fmt = getattr(args, "format", "jsonl")
    zero = getattr(args, "zero_based", False)
    if fmt == "csv":
        if not (args.in_ids and args.out_ids and len(args.in_ids) == len(args.out_ids) == 1):
            raise ValidationError("csv ingest needs exactly one --in and one --out array")
        ia, oa = cat.array(args.in_ids[0]), cat.array(args.out_ids[0])
        rows = parse_csv_rows(text, oa.dim, ia.dim)
        rel = check(LineageRelation.from_rows(oa, ia, rows, zero_based=zero))
        return [{"op": args.op, "args": args.args or {}, "in": args.in_ids, "out": args.out_ids, "rels": [rel]}]
    groups: dict[tuple, dict] = {}
    for header, lines in split_stream(text):
        if header is None:
            if not (args.in_ids and args.out_ids and len(args.in_ids) == len(args.out_ids) == 1):
                raise ValidationError("stream has no header; pass one --in and one --out array")
            ia, oa = cat.array(args.in_ids[0]), cat.array(args.out_ids[0])
            op, op_args, ins, outs = args.op, args.args or {}, args.in_ids, args.out_ids
        else:
            try:
                ia, oa = _meta(cat, header["in"]), _meta(cat, header["out"])
            except KeyError as exc:
                raise ValidationError(f"header is missing {exc}") from exc
            op = args.op or header.get("op")
            op_args = args.args if args.args is not None else header.get("args", {})
            ins = args.in_ids or header.get("op_in", [ia.id])
            outs = args.out_ids or header.get("op_out", [oa.id])
        if not op:
            raise ValidationError("operation name unknown; pass --op")
        rel = check(LineageRelation.from_rows(oa, ia, parse_jsonl_rows(lines), zero_based=zero))
        key = (op, json.dumps(op_args, sort_keys=True), tuple(ins), tuple(outs))
        groups.setdefault(key, {"op": op, "args": op_args, "in": list(ins), "out": list(outs), "rels": []})
        groups[key]["rels"].append(rel)
    if not groups:
        raise ValidationError("empty ingest stream")
    return list(groups.values())


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _catalog(cfg: Config, create=True) -> Catalog:
    return Catalog.open(cfg.catalog, create=create)


def cmd_array(args, cfg):
    cat = _catalog(cfg)
    if args.action == "add":
        if not args.id or not args.shape:
            raise UsageError("array add needs ID and --shape")
        meta = cat.add_array(args.id, args.shape)
        _emit({"id": meta.id, "shape": list(meta.shape)})
    else:
        for a in cat.arrays().values():
            _emit({"id": a.id, "shape": list(a.shape)})
    return 0


def cmd_ingest(args, cfg):
    cat = _catalog(cfg)
    text = _read_input(args.file)
    with cat.writer():
        groups = load_groups(cat, text, args)
        for g in groups:
            rep = register_operation(cat, g["op"], g["in"], g["out"], g["args"], captured=g["rels"],
                                     reuse=False, m=cfg.reuse_m, codec=cfg.codec)
            _emit(rep.to_json())
    return 0


def cmd_register(args, cfg):
    cat = _catalog(cfg)
    op_args = args.args or {}
    captured = None
    with cat.writer():
        if args.capture:
            rels = []
            ns = argparse.Namespace(format="jsonl", zero_based=args.zero_based, op=args.op, args=op_args,
                                    in_ids=args.in_ids if len(args.in_ids) == 1 else None,
                                    out_ids=args.out_ids if len(args.out_ids) == 1 else None)
            for f in args.capture:
                for g in load_groups(cat, _read_input(f), ns):
                    rels += g["rels"]
            captured = rels
        rep = register_operation(cat, args.op, args.in_ids, args.out_ids, op_args, captured=captured,
                                 reuse=args.reuse, m=args.m or cfg.reuse_m, codec=cfg.codec)
    _emit(rep.to_json())
    return 0


def parse_cells(text: str):
    """Cells as one JSON document or JSON lines; each item is an index tuple
    ``[i, j]`` or a range row ``[[lo, hi], [lo, hi]]``."""
    text = text.strip()
    if not text:
        raise ValidationError("no query cells given")
    try:
        items = json.loads(text)
        if items and not isinstance(items[0], list):
            items = [items]
    except ValueError:
        try:
            items = [json.loads(l) for l in text.splitlines() if l.strip()]
        except ValueError as exc:
            raise ValidationError(f"cannot parse query cells: {exc}") from exc
    if not isinstance(items, list) or not items:
        raise ValidationError("query cells must be a non-empty JSON list")
    try:
        arr = np.asarray(items, dtype=np.int64)
    except (ValueError, TypeError) as exc:
        raise ValidationError("query cells must all be index tuples or all be range rows") from exc
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = np.concatenate([arr, arr], axis=2)
    if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 2):
        raise ValidationError("query cells must be index tuples or [lo, hi] range rows")
    return arr


def cmd_query(args, cfg):
    cat = _catalog(cfg, create=False)
    cells_text = args.cells
    if cells_text == "-" or (not cells_text.lstrip().startswith("[") and Path(cells_text).exists()):
        cells_text = _read_input(cells_text)
    spec = QuerySpec(args.path, parse_cells(cells_text), args.direction)
    res = prov_query(spec, cat, merge=cfg.merge and not args.no_merge, max_rows=args.max_rows or cfg.max_rows)
    for rec in res.records():
        _emit(rec)
    if args.stats:
        _emit({"stats": res.stats}, sys.stderr)
    return 0


def _entry_summary(digest, e):
    return {"digest": digest, "level": e.level, "op_name": e.signature.op_name, "status": e.status,
            "confirmations": e.confirmations, "seen_shapes": [list(map(list, s)) for s in e.seen_shapes]}


def cmd_signatures(args, cfg):
    cat = _catalog(cfg, create=False)
    reg = Registry(cat)
    if args.action == "list":
        for digest, e in reg.entries():
            _emit(_entry_summary(digest, e))
        return 0
    if not args.digest:
        raise UsageError("signatures inspect needs a digest (or unique prefix)")
    digest, e = reg.find(args.digest)
    out = _entry_summary(digest, e)
    out["key"] = e.signature.key
    out["payload"] = e.payload
    _emit(out)
    return 0


def cmd_stats(args, cfg):
    cat = _catalog(cfg, create=False)
    edge = None
    if args.edge:
        parts = _ids(args.edge)
        if len(parts) != 3:
            raise UsageError("--edge takes IN,OUT,OP")
        edge = EdgeKey(*parts)
    _emit(cat.stats(edge, csv_baseline=args.csv_baseline))
    return 0


def cmd_verify(args, cfg):
    cat = _catalog(cfg, create=False)
    rep = cat.verify(prune=args.prune, sample=args.sample)
    _emit(rep)
    return 0 if rep["ok"] else 3


def cmd_gen(args, cfg):
    params = args.params or {}
    shapes = [args.shape] + ([args.shape2] if args.shape2 else [])
    g = synth.OpGenerator(args.kind, shapes, params, seed=args.seed if args.seed is not None else 0)
    g.in_ids = args.in_ids or (["A", "C"][: g.n_inputs] if g.n_inputs == 2 else ["A"])
    if len(g.in_ids) != g.n_inputs:
        raise ValidationError(f"{args.kind} takes {g.n_inputs} input ids")
    g.out_id = args.out_id
    rels = synth.generate(g)
    op_args = dict(params)
    if args.kind in synth.VALUE_DEPENDENT:
        op_args.setdefault("seed", g.seed)
    buf = io.StringIO()
    write_stream(rels, args.kind, op_args, g.in_ids, [g.out_id], buf, args.format)
    if args.out and args.out != "-":
        try:
            Path(args.out).write_text(buf.getvalue())
        except OSError as exc:
            raise StorageError(f"cannot write {args.out}: {exc}") from exc
    else:
        sys.stdout.write(buf.getvalue())
    return 0


def cmd_bench(args, cfg):
    text = _read_input(args.spec)
    if args.spec and args.spec.endswith(".toml"):
        from .config import tomllib

        try:
            spec = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ValidationError(f"bad bench spec: {exc}") from exc
    else:
        spec = _json_arg(text, "bench spec")
    if not isinstance(spec, dict):
        raise ValidationError("bench spec must be an object")
    if args.seed is not None:
        spec.setdefault("pipeline", {})["seed"] = args.seed
    spec.setdefault("timeout_s", cfg.timeout_s)
    spec.setdefault("max_rows", cfg.max_rows)
    rep = bench_mod.run(spec)
    if args.out:
        try:
            Path(args.out).write_text(json.dumps(rep, indent=1, sort_keys=True))
        except OSError as exc:
            raise StorageError(f"cannot write {args.out}: {exc}") from exc
    else:
        _emit(rep)
    if not args.quiet:
        sys.stderr.write(bench_mod.format_table(rep) + "\n")
    return 0 if rep["mismatches"] == 0 else 2


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lineagestore", description="Compressed array lineage store.")
    p.add_argument("--catalog", help="catalog root (default: $LINEAGESTORE_CATALOG)")
    p.add_argument("--config", help="JSON or TOML config file")
    p.add_argument("--seed", type=int, help="seed for gen and bench")
    p.add_argument("--quiet", action="store_true", help="only errors on stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    a = sub.add_parser("array", help="register or list arrays")
    a.add_argument("action", choices=["add", "list"])
    a.add_argument("id", nargs="?")
    a.add_argument("--shape", type=_dims)
    a.set_defaults(fn=cmd_array)

    def op_flags(sp, required):
        sp.add_argument("--op", required=required, help="operation name")
        sp.add_argument("--in", dest="in_ids", type=_ids, required=required, help="input array ids")
        sp.add_argument("--out", dest="out_ids", type=_ids, required=required, help="output array ids")
        sp.add_argument("--args", type=lambda s: _json_arg(s, "--args"), help="scalar op arguments as JSON")
        sp.add_argument("--zero-based", action="store_true", help="input indices start at 0")

    i = sub.add_parser("ingest", help="compress and store captured lineage")
    i.add_argument("file", nargs="?", default="-", help="ingest stream (default stdin)")
    op_flags(i, False)
    i.add_argument("--format", choices=["jsonl", "csv"], default="jsonl")
    i.set_defaults(fn=cmd_ingest)

    r = sub.add_parser("register", help="register an operation call, reusing stored lineage if possible")
    op_flags(r, True)
    r.add_argument("--capture", nargs="+", help="captured lineage files (ingest format)")
    r.add_argument("--reuse", action="store_true", help="serve from a confirmed signature when one exists")
    r.add_argument("-m", type=int, help="confirmations needed (default from config)")
    r.set_defaults(fn=cmd_register)

    q = sub.add_parser("query", help="forward/backward lineage query")
    q.add_argument("--path", type=_ids, required=True, help="array ids X1,X2,...")
    q.add_argument("--cells", required=True, help="inline JSON, a file, or - for stdin")
    q.add_argument("--direction", choices=["auto", *DIRECTIONS], default="auto")
    q.add_argument("--stats", action="store_true", help="print per-hop stats to stderr")
    q.add_argument("--no-merge", action="store_true", help="skip merging between hops")
    q.add_argument("--max-rows", type=int, help="intermediate row cap")
    q.set_defaults(fn=cmd_query)

    s = sub.add_parser("signatures", help="inspect the reuse registry")
    s.add_argument("action", choices=["list", "inspect"])
    s.add_argument("digest", nargs="?")
    s.set_defaults(fn=cmd_signatures)

    st = sub.add_parser("stats", help="storage size report")
    st.add_argument("--edge", help="IN,OUT,OP")
    st.add_argument("--csv-baseline", action="store_true", help="also report CSV sizes")
    st.set_defaults(fn=cmd_stats)

    v = sub.add_parser("verify", help="check stored tables")
    v.add_argument("--prune", action="store_true", help="delete unreferenced table files")
    v.add_argument("--sample", type=int, help="check only N random tables")
    v.set_defaults(fn=cmd_verify)

    g = sub.add_parser("gen", help="synthetic lineage in ingest format")
    g.add_argument("--kind", required=True, choices=list(synth.KINDS))
    g.add_argument("--shape", type=_dims, required=True)
    g.add_argument("--shape2", type=_dims, help="second input shape (two-input kinds)")
    g.add_argument("--params", type=lambda s: _json_arg(s, "--params"), help="generator parameters as JSON")
    g.add_argument("--in-ids", type=_ids)
    g.add_argument("--out-id", default="B")
    g.add_argument("--format", choices=["jsonl", "csv"], default="jsonl")
    g.add_argument("--out", help="output file (default stdout)")
    g.set_defaults(fn=cmd_gen)

    b = sub.add_parser("bench", help="latency benchmark")
    b.add_argument("--spec", help="JSON or TOML spec file (default stdin)")
    b.add_argument("--out", help="write the JSON report here instead of stdout")
    b.set_defaults(fn=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        _emit({"error": "UsageError", "message": str(exc)}, sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        cfg = Config.load(args.config, catalog=args.catalog)
    except ConfigError as exc:
        _emit({"error": "ConfigError", "message": str(exc)}, sys.stderr)
        return exc.exit_code
    level = logging.ERROR if args.quiet else getattr(logging, cfg.log_level.upper(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.fn(args, cfg)
    except UsageError as exc:
        _emit({"error": "UsageError", "message": str(exc)}, sys.stderr)
        return 1
    except LineageError as exc:
        _emit({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        return exc.exit_code
    except BrokenPipeError:
        return 0
    except OSError as exc:
        _emit({"error": "OSError", "message": str(exc)}, sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
