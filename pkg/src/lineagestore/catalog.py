"""
On-disk catalog: arrays, operations, lineage edges and stored tables.

Layout under the root directory::

    manifest.json          all metadata, human readable
    tables/<sha256>.prc1   PRC1 files, named by the hash of their bytes
    .lock                  writer lock (fcntl)

Every write goes to a temporary file that is fsynced and renamed into
place, and the manifest is replaced the same way after its table files are
durable, so a reader (or a crash) only ever sees a committed snapshot.
Superseded table files stay on disk until ``verify(prune=True)``.
"""

from __future__ import annotations

import contextlib
import fcntl
import hashlib
import json
import os
import tempfile
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import prc1
from .core import ArrayMeta, LineageRelation
from .errors import ChecksumError, MissingEdgeError, StorageError, ValidationError
from .provrc import BACKWARD, DIRECTIONS, FORWARD, CompressedTable, compress, decompress

ENV_ROOT = "LINEAGESTORE_CATALOG"
ENV_WRITE_DELAY = "LINEAGESTORE_WRITE_DELAY"  # test hook: seconds slept per 64 KiB chunk
MANIFEST = "manifest.json"
FORMAT_VERSION = 1
_CHUNK = 1 << 16


class EdgeKey(NamedTuple):
    in_id: str
    out_id: str
    op_id: str

    def label(self) -> str:
        return f"{self.in_id}->{self.out_id} [{self.op_id}]"


@dataclass
class StoredTableHandle:
    file: str
    codec: str
    direction: str
    rows: int
    lineage_rows: int
    bytes: int
    sha256: str

    @classmethod
    def from_json(cls, d):
        return cls(**d)


def _fsync_dir(path: Path):
    try:
        fd = os.open(path, os.O_RDONLY)
    except OSError:
        return
    try:
        os.fsync(fd)
    finally:
        os.close(fd)


def atomic_write(path: Path, data: bytes) -> None:
    """Write ``data`` to ``path`` through a temp file plus rename."""
    path = Path(path)
    delay = float(os.environ.get(ENV_WRITE_DELAY, "0") or 0)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            if delay > 0:
                for off in range(0, len(data), _CHUNK):
                    fh.write(data[off: off + _CHUNK])
                    fh.flush()
                    time.sleep(delay)
            else:
                fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
        _fsync_dir(path.parent)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


def raw_size(lineage_rows: int, l: int, m: int) -> int:
    """Binary row-store baseline: one 8-byte integer per attribute per row."""
    return int(lineage_rows) * (l + m) * 8


def csv_size(rel: LineageRelation) -> int:
    """Bytes of the relation written as CSV with a ``b_1..,a_1..`` header."""
    l, m = rel.out_array.dim, rel.in_array.dim
    header = len(",".join([f"b_{j + 1}" for j in range(l)] + [f"a_{i + 1}" for i in range(m)])) + 1
    mat = rel.matrix()
    if mat.shape[0] == 0:
        return header
    digits = np.floor(np.log10(np.maximum(np.abs(mat), 1))).astype(np.int64) + 1 + (mat < 0)
    return header + int(digits.sum()) + mat.shape[0] * (l + m)


class Catalog:
    """Single-writer, multi-reader store. Use :meth:`open`."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.tables_dir = self.root / "tables"
        self._cache: dict[str, CompressedTable] = {}
        self._lock_depth = 0
        self._lock_fh = None
        self._load()

    # -- lifecycle ---------------------------------------------------------

    @classmethod
    def open(cls, root=None, create: bool = True) -> "Catalog":
        root = root or os.environ.get(ENV_ROOT)
        if not root:
            raise StorageError(f"no catalog root given (pass a path or set {ENV_ROOT})")
        root = Path(root)
        if not (root / MANIFEST).exists():
            if not create:
                raise StorageError(f"no catalog at {root}")
            try:
                (root / "tables").mkdir(parents=True, exist_ok=True)
            except OSError as exc:
                raise StorageError(f"cannot create catalog at {root}: {exc}") from exc
            cat = cls.__new__(cls)
            cat.root = root
            cat.tables_dir = root / "tables"
            cat._cache = {}
            cat._lock_depth = 0
            cat._lock_fh = None
            cat._m = cls._empty_manifest()
            with cat.writer():
                if not (root / MANIFEST).exists():
                    cat._save()
            return cls(root)
        return cls(root)

    @staticmethod
    def _empty_manifest():
        return {"format": FORMAT_VERSION, "arrays": {}, "ops": {}, "edges": [], "reuse": {}, "blobs": {}}

    def _load(self):
        path = self.root / MANIFEST
        try:
            text = path.read_text()
        except FileNotFoundError as exc:
            raise StorageError(f"no catalog at {self.root}") from exc
        except OSError as exc:
            raise StorageError(f"cannot read {path}: {exc}") from exc
        try:
            self._m = json.loads(text)
        except ValueError as exc:
            raise StorageError(f"corrupt manifest {path}: {exc}") from exc
        if self._m.get("format") != FORMAT_VERSION:
            raise StorageError(f"unsupported catalog format {self._m.get('format')!r}")

    def refresh(self):
        self._load()

    def _save(self):
        data = json.dumps(self._m, indent=1, sort_keys=True).encode()
        atomic_write(self.root / MANIFEST, data)

    @contextlib.contextmanager
    def writer(self):
        """Hold the exclusive writer lock; reloads the manifest on entry and
        commits it on clean exit."""
        if self._lock_depth:
            self._lock_depth += 1
            try:
                yield self
            finally:
                self._lock_depth -= 1
            return
        fh = open(self.root / ".lock", "a+")
        try:
            fcntl.flock(fh.fileno(), fcntl.LOCK_EX)
            self._lock_fh = fh
            self._lock_depth = 1
            if (self.root / MANIFEST).exists():
                self._load()
            try:
                yield self
            except BaseException:
                self._load()
                raise
            self._save()
        finally:
            self._lock_depth = 0
            self._lock_fh = None
            fcntl.flock(fh.fileno(), fcntl.LOCK_UN)
            fh.close()

    # -- arrays and ops ----------------------------------------------------

    def add_array(self, array_id: str, shape) -> ArrayMeta:
        meta = ArrayMeta(array_id, tuple(shape))
        with self.writer():
            old = self._m["arrays"].get(array_id)
            if old is not None and tuple(old["shape"]) != meta.shape:
                raise ValidationError(f"array {array_id!r} already registered with shape {tuple(old['shape'])}")
            self._m["arrays"][array_id] = {"shape": list(meta.shape)}
        return meta

    def array(self, array_id: str) -> ArrayMeta:
        rec = self._m["arrays"].get(array_id)
        if rec is None:
            raise MissingEdgeError(f"unknown array {array_id!r}")
        return ArrayMeta(array_id, tuple(rec["shape"]))

    def arrays(self) -> dict[str, ArrayMeta]:
        return {k: ArrayMeta(k, tuple(v["shape"])) for k, v in self._m["arrays"].items()}

    def add_op(self, op_name: str, in_ids, out_ids, args: dict | None = None, digest: str | None = None) -> str:
        with self.writer():
            for a in list(in_ids) + list(out_ids):
                self.array(a)
            n = sum(1 for v in self._m["ops"].values() if v["name"] == op_name)
            op_id = f"{op_name}#{n + 1}"
            while op_id in self._m["ops"]:
                n += 1
                op_id = f"{op_name}#{n + 1}"
            self._m["ops"][op_id] = {"name": op_name, "in": list(in_ids), "out": list(out_ids),
                                     "args": args or {}, "args_digest": digest, "created": time.time()}
        return op_id

    def op(self, op_id: str) -> dict:
        try:
            return self._m["ops"][op_id]
        except KeyError as exc:
            raise MissingEdgeError(f"unknown operation {op_id!r}") from exc

    # -- tables ------------------------------------------------------------

    def _write_table(self, table: CompressedTable, codec: str) -> StoredTableHandle:
        data = prc1.serialize(table, codec)
        sha = hashlib.sha256(data).hexdigest()
        rel_path = f"tables/{sha}.prc1"
        path = self.root / rel_path
        if not path.exists():
            try:
                atomic_write(path, data)
            except OSError as exc:
                raise StorageError(f"cannot write {path}: {exc}") from exc
        self._cache[sha] = table
        return StoredTableHandle(rel_path, codec, table.direction, table.n_rows, table.denotation_size(),
                                 len(data), sha)

    def _find_edge_rec(self, edge: EdgeKey):
        for rec in self._m["edges"]:
            if (rec["in"], rec["out"], rec["op"]) == tuple(edge):
                return rec
        return None

    def put_table(self, edge, table: CompressedTable, codec: str = "plain", overwrite: bool = False) -> StoredTableHandle:
        edge = EdgeKey(*edge)
        if (table.in_array.id, table.out_array.id) != (edge.in_id, edge.out_id):
            raise ValidationError(f"table connects {table.in_array.id}->{table.out_array.id}, not {edge.label()}")
        with self.writer():
            for a in (table.in_array, table.out_array):
                if self.array(a.id).shape != a.shape:
                    raise ValidationError(f"table shape for {a.id!r} is {a.shape}, catalog has {self.array(a.id).shape}")
            rec = self._find_edge_rec(edge)
            if rec is not None and table.direction in rec["tables"] and not overwrite:
                raise ValidationError(f"edge {edge.label()} already has a {table.direction} table (use overwrite)")
            handle = self._write_table(table, codec)
            if rec is None:
                rec = {"in": edge.in_id, "out": edge.out_id, "op": edge.op_id, "tables": {}}
                self._m["edges"].append(rec)
            rec["tables"][table.direction] = asdict(handle)
        return handle

    def put_relation(self, rel: LineageRelation, op_id: str, codec: str = "plain",
                     directions=DIRECTIONS, overwrite: bool = False) -> dict[str, StoredTableHandle]:
        edge = EdgeKey(rel.in_array.id, rel.out_array.id, op_id)
        out = {}
        with self.writer():
            for d in directions:
                out[d] = self.put_table(edge, compress(rel, d, op_id), codec, overwrite)
        return out

    def _read_handle(self, h: StoredTableHandle) -> CompressedTable:
        if h.sha256 in self._cache:
            return self._cache[h.sha256]
        path = self.root / h.file
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise StorageError(f"cannot read {path}: {exc}") from exc
        if hashlib.sha256(data).hexdigest() != h.sha256 or len(data) != h.bytes:
            raise ChecksumError(f"{path} does not match its recorded checksum")
        t = prc1.deserialize(data)
        self._cache[h.sha256] = t
        return t

    def handle(self, edge, direction: str) -> StoredTableHandle:
        edge = EdgeKey(*edge)
        rec = self._find_edge_rec(edge)
        if rec is None:
            raise MissingEdgeError(f"missing edge {edge.label()}")
        h = rec["tables"].get(direction)
        if h is None:
            raise MissingEdgeError(f"edge {edge.label()} has no {direction} table")
        return StoredTableHandle.from_json(h)

    def get_table(self, edge, direction: str = BACKWARD) -> CompressedTable:
        return self._read_handle(self.handle(edge, direction))

    def materialize(self, edge, direction: str, codec: str = "plain") -> StoredTableHandle:
        """Build a missing direction from the stored one (registration time
        only; queries never do this)."""
        edge = EdgeKey(*edge)
        rec = self._find_edge_rec(edge)
        if rec is None:
            raise MissingEdgeError(f"missing edge {edge.label()}")
        if direction in rec["tables"]:
            return StoredTableHandle.from_json(rec["tables"][direction])
        other = next(iter(rec["tables"]))
        rel = decompress(self.get_table(edge, other))
        return self.put_table(edge, compress(rel, direction, edge.op_id), codec)

    def edges(self) -> list[EdgeKey]:
        return [EdgeKey(r["in"], r["out"], r["op"]) for r in self._m["edges"]]

    def find_edges(self, a: str, b: str) -> list[tuple[EdgeKey, str]]:
        """Edges usable for a hop from ``a`` to ``b`` with the direction whose
        table is keyed on ``a``."""
        out = []
        for e in self.edges():
            if (e.out_id, e.in_id) == (a, b):
                out.append((e, BACKWARD))
            elif (e.in_id, e.out_id) == (a, b):
                out.append((e, FORWARD))
        return out

    def table_for(self, src: str, dst: str, direction: str = "auto") -> CompressedTable:
        cands = self.find_edges(src, dst)
        if direction != "auto":
            cands = [c for c in cands if c[1] == direction]
        if not cands:
            raise MissingEdgeError(f"missing edge between {src} and {dst}"
                                   + ("" if direction == "auto" else f" in {direction} direction"))
        if len(cands) > 1:
            raise ValidationError(f"{len(cands)} operations connect {src} and {dst}; path is ambiguous")
        edge, d = cands[0]
        rec = self._find_edge_rec(edge)
        if d not in rec["tables"]:
            raise MissingEdgeError(f"edge {edge.label()} has no {d} table (materialize it at registration)")
        return self.get_table(edge, d)

    # -- blobs (reuse payloads) ---------------------------------------------

    def put_blob_table(self, table: CompressedTable, codec: str = "plain") -> StoredTableHandle:
        with self.writer():
            h = self._write_table(table, codec)
            self._m["blobs"][h.sha256] = asdict(h)
        return h

    def get_blob_table(self, handle) -> CompressedTable:
        if not isinstance(handle, StoredTableHandle):
            handle = StoredTableHandle.from_json(handle)
        return self._read_handle(handle)

    @property
    def reuse_state(self) -> dict:
        return self._m.setdefault("reuse", {})

    def set_reuse_state(self, state: dict):
        with self.writer():
            self._m["reuse"] = state

    # -- reporting ---------------------------------------------------------

    def stats(self, edge=None, csv_baseline: bool = False) -> dict:
        rows = []
        edges = [EdgeKey(*edge)] if edge is not None else self.edges()
        for e in edges:
            rec = self._find_edge_rec(e)
            if rec is None:
                raise MissingEdgeError(f"missing edge {e.label()}")
            l, m = self.array(e.out_id).dim, self.array(e.in_id).dim
            for d, hj in sorted(rec["tables"].items()):
                h = StoredTableHandle.from_json(hj)
                raw = raw_size(h.lineage_rows, l, m)
                row = {"edge": e.label(), "direction": d, "codec": h.codec, "table_rows": h.rows,
                       "lineage_rows": h.lineage_rows, "raw_bytes": raw, "stored_bytes": h.bytes,
                       "ratio_pct": (100.0 * h.bytes / raw) if raw else 0.0}
                if csv_baseline:
                    c = csv_size(decompress(self._read_handle(h)))
                    row["csv_bytes"] = c
                    row["ratio_csv_pct"] = 100.0 * h.bytes / c if c else 0.0
                rows.append(row)
        tot_raw = sum(r["raw_bytes"] for r in rows)
        tot_st = sum(r["stored_bytes"] for r in rows)
        return {"edges": rows, "total_raw_bytes": tot_raw, "total_stored_bytes": tot_st,
                "total_ratio_pct": (100.0 * tot_st / tot_raw) if tot_raw else 0.0}

    def verify(self, prune: bool = False, sample: int | None = None) -> dict:
        """Check every referenced table: file hash, PRC1 checksum, and that
        re-serializing the decoded table reproduces the file byte for byte.
        With ``prune`` unreferenced table files are deleted."""
        problems = []
        checked = 0
        handles = []
        for rec in self._m["edges"]:
            for d, hj in rec["tables"].items():
                handles.append((f"{rec['in']}->{rec['out']} [{rec['op']}] {d}", StoredTableHandle.from_json(hj)))
        for sha, hj in self._m.get("blobs", {}).items():
            handles.append((f"blob {sha[:12]}", StoredTableHandle.from_json(hj)))
        if sample is not None and sample < len(handles):
            idx = np.random.default_rng(0).choice(len(handles), size=sample, replace=False)
            handles = [handles[i] for i in sorted(idx)]
        for label, h in handles:
            checked += 1
            self._cache.pop(h.sha256, None)
            try:
                t = self._read_handle(h)
                if prc1.serialize(t, h.codec) != (self.root / h.file).read_bytes():
                    problems.append(f"{label}: re-serialization differs")
            except (StorageError, ValidationError) as exc:
                problems.append(f"{label}: {exc}")
        pruned = []
        if prune:
            with self.writer():
                live = {StoredTableHandle.from_json(h).file for rec in self._m["edges"] for h in rec["tables"].values()}
                live |= {h["file"] for h in self._m.get("blobs", {}).values()}
                for p in sorted(self.tables_dir.iterdir()):
                    rel = f"tables/{p.name}"
                    if rel not in live:
                        p.unlink()
                        pruned.append(rel)
        return {"checked": checked, "problems": problems, "pruned": pruned, "ok": not problems}
