"""
Lineage reuse across repeated operation calls.

Each registration is keyed at three granularities:

* ``base``: operation name, input array ids and argument digest
* ``dim``: operation name, input shapes and argument digest
* ``gen``: operation name and argument digest only

A capture-bearing call stores its tables and opens ``temporary`` dim/gen
entries. Later capture-bearing calls that hit the same key check whether
the stored tables (instantiated for the new shapes, for gen) denote the new
capture. ``m`` matches confirm an entry, gen matches only count for input
shapes not seen before, and one mismatch rejects the key for good. Only
confirmed entries are served to capture-free calls.

Arguments must be scalars (or flat lists of scalars); callers fold RNG seeds
into them, otherwise lineage of randomized ops is reused at their own risk.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .catalog import Catalog, EdgeKey, StoredTableHandle
from .core import ArrayMeta, LineageRelation, check
from .errors import ReuseError, ValidationError
from .provrc import (BACKWARD, FORWARD, CompressedTable, GeneralizedTable, Term, compress, decompress,
                     generalize, instantiate)

BASE, DIM, GEN = "base", "dim", "gen"
LEVELS = (BASE, DIM, GEN)
TEMPORARY, CONFIRMED, REJECTED = "temporary", "confirmed", "rejected"
GEN_MODE = "affine"

_SCALARS = (bool, int, float, str, type(None))


def _canon_scalar(v, name):
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        raise ValidationError(f"argument {name!r} is not a finite number")
    if not isinstance(v, _SCALARS):
        raise ValidationError(f"argument {name!r} must be a scalar, got {type(v).__name__}")
    return v


def canonical_args(op_args: dict | None) -> dict:
    out = {}
    for k, v in sorted((op_args or {}).items()):
        if not isinstance(k, str):
            raise ValidationError("argument names must be strings")
        if isinstance(v, (list, tuple)):
            out[k] = [_canon_scalar(x, k) for x in v]
        else:
            out[k] = _canon_scalar(v, k)
    return out


def args_digest(op_args: dict | None) -> str:
    text = json.dumps(canonical_args(op_args), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass(frozen=True)
class OpSignature:
    level: str
    op_name: str
    key: tuple

    @property
    def digest(self) -> str:
        text = json.dumps([self.level, self.op_name, self.key], separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def to_json(self):
        return {"level": self.level, "op_name": self.op_name, "key": self.key}

    @classmethod
    def from_json(cls, d):
        return cls(d["level"], d["op_name"], _tuplify(d["key"]))


def _tuplify(v):
    return tuple(_tuplify(x) for x in v) if isinstance(v, list) else v


def signatures(op_name: str, in_ids: Sequence[str], in_shapes, op_args) -> dict[str, OpSignature]:
    dg = args_digest(op_args)
    shapes = tuple(tuple(int(x) for x in s) for s in in_shapes)
    return {BASE: OpSignature(BASE, op_name, (tuple(in_ids), dg)),
            DIM: OpSignature(DIM, op_name, (shapes, dg)),
            GEN: OpSignature(GEN, op_name, (dg,))}


@dataclass
class ReuseEntry:
    signature: OpSignature
    status: str
    payload: list[dict]
    confirmations: int = 0
    seen_shapes: list = field(default_factory=list)
    created: float = field(default_factory=time.time)
    updated: float = field(default_factory=time.time)

    @property
    def level(self) -> str:
        return self.signature.level

    def to_json(self):
        d = asdict(self)
        d["signature"] = self.signature.to_json()
        return d

    @classmethod
    def from_json(cls, d):
        d = dict(d)
        d["signature"] = OpSignature.from_json(d["signature"])
        d["seen_shapes"] = [_tuplify(s) for s in d["seen_shapes"]]
        return cls(**d)


# -- payload (de)serialization ----------------------------------------------

def _gen_to_json(g: GeneralizedTable, handle: StoredTableHandle, out_pos: int) -> dict:
    return {"in": g.edge_input, "out": out_pos, "template": asdict(handle),
            "in_shapes": [[int(x) for x in s] for s in g.in_shapes],
            "terms": [[f, int(flat), t.to_json()] for (f, flat), t in sorted(g.terms.items())],
            "out_terms": [{"term": t.to_json()} if isinstance(t, Term) else int(t) for t in g.out_terms],
            "ambiguities": list(g.ambiguities)}


def _gen_from_json(cat: Catalog, d: dict) -> GeneralizedTable:
    return GeneralizedTable(cat.get_blob_table(d["template"]),
                            tuple(tuple(s) for s in d["in_shapes"]), int(d["in"]),
                            {(f, int(flat)): Term.from_json(t) for f, flat, t in d["terms"]},
                            tuple(Term.from_json(t["term"]) if isinstance(t, dict) else int(t)
                                  for t in d["out_terms"]),
                            list(d["ambiguities"]))


class Registry:
    """View over the catalog's reuse section. Mutations must run inside
    ``catalog.writer()``; they are committed with the manifest."""

    def __init__(self, catalog: Catalog):
        self.catalog = catalog

    @property
    def _entries(self) -> dict:
        return self.catalog.reuse_state.setdefault("entries", {})

    def get(self, sig: OpSignature) -> ReuseEntry | None:
        d = self._entries.get(sig.digest)
        return ReuseEntry.from_json(d) if d else None

    def put(self, e: ReuseEntry):
        e.updated = time.time()
        self._entries[e.signature.digest] = e.to_json()

    def entries(self) -> list[tuple[str, ReuseEntry]]:
        return [(k, ReuseEntry.from_json(v)) for k, v in sorted(self._entries.items())]

    def find(self, prefix: str) -> tuple[str, ReuseEntry]:
        hits = [(k, e) for k, e in self.entries() if k.startswith(prefix)]
        if len(hits) != 1:
            raise ValidationError(f"{len(hits)} signatures match {prefix!r}")
        return hits[0]


def lookup(catalog: Catalog, op_name: str, in_arrays: Sequence[str], shapes, op_args) -> ReuseEntry | None:
    """Most specific confirmed entry (base, then dim, then gen) or None."""
    reg = Registry(catalog)
    for level, sig in signatures(op_name, in_arrays, shapes, op_args).items():
        e = reg.get(sig)
        if e is not None and e.status == CONFIRMED:
            return e
    return None


# -- building tables from an entry -------------------------------------------

def _rename(t: CompressedTable, in_meta: ArrayMeta, out_meta: ArrayMeta, op_id=None) -> CompressedTable:
    if t.in_array.shape != in_meta.shape or t.out_array.shape != out_meta.shape:
        raise ReuseError(f"shape mismatch against reused tables: stored {t.in_array.shape}->{t.out_array.shape}, "
                         f"requested {in_meta.shape}->{out_meta.shape}")
    return replace(t, in_array=in_meta, out_array=out_meta, op_id=op_id)


def _fits(t: CompressedTable) -> bool:
    ext = np.asarray(t.in_array.shape, dtype=np.int64)
    okey = np.asarray(t.out_array.shape, dtype=np.int64)
    if t.n_rows and np.any(t.key_hi > okey):
        return False
    vm = t.val_mask
    return not (t.n_rows and np.any(vm & (t.val_hi > ext)))


def predict(catalog: Catalog, entry: ReuseEntry, in_metas: Sequence[ArrayMeta],
            out_metas: Sequence[ArrayMeta], op_id=None) -> dict[tuple[int, int], CompressedTable]:
    """Backward tables the entry predicts for these arrays, keyed by
    (input position, output position)."""
    shapes = [m.shape for m in in_metas]
    out = {}
    for item in entry.payload:
        k, o = int(item["in"]), int(item["out"])
        if k >= len(in_metas) or o >= len(out_metas):
            raise ReuseError("reused entry has more inputs or outputs than this call")
        if entry.level == GEN:
            g = _gen_from_json(catalog, item)
            try:
                t = instantiate(g, op_in_shapes=shapes, in_id=in_metas[k].id, out_id=out_metas[o].id)
            except ValidationError as exc:
                raise ReuseError(f"cannot instantiate generalized table: {exc}") from exc
            t = replace(t, op_id=op_id)
            if t.out_array.shape != out_metas[o].shape:
                raise ReuseError(f"shape mismatch against reused tables: predicted output shape "
                                 f"{t.out_array.shape}, array {out_metas[o].id} has {out_metas[o].shape}")
            if not _fits(t):
                raise ReuseError("shape mismatch against reused tables: instantiated ranges exceed the arrays")
        else:
            t = _rename(catalog.get_blob_table(item["backward"]), in_metas[k], out_metas[o], op_id)
        out[(k, o)] = t
    return out


def _same(pred: dict, actual: dict) -> bool:
    if set(pred) != set(actual):
        return False
    for key, t in pred.items():
        a = actual[key]
        if decompress(t).row_set() != decompress(a).row_set():
            return False
    return True


def predict_and_confirm(catalog: Catalog, entry: ReuseEntry, new_tables: dict, in_metas, out_metas,
                        m: int = 1) -> str:
    """Compare an entry's prediction with a fresh capture and advance its
    state. Returns the event: ``matched``, ``confirmed``, ``repeat`` (gen
    match on an already seen shape) or ``rejected``."""
    if entry.status == REJECTED:
        return "rejected"
    try:
        ok = _same(predict(catalog, entry, in_metas, out_metas), new_tables)
    except ReuseError:
        ok = False
    if not ok:
        entry.status = REJECTED
        return "rejected"
    shapes = tuple(tuple(x.shape) for x in in_metas)
    if entry.level == GEN and shapes in entry.seen_shapes:
        return "repeat"
    entry.confirmations += 1
    if shapes not in entry.seen_shapes:
        entry.seen_shapes.append(shapes)
    if entry.status == TEMPORARY and entry.confirmations >= m:
        entry.status = CONFIRMED
        return "confirmed"
    return "matched"


# -- registration ------------------------------------------------------------

@dataclass
class RegistrationReport:
    op_id: str
    op_name: str
    source: str
    edges: list[str]
    levels: dict[str, dict]
    ambiguities: list[str] = field(default_factory=list)

    def to_json(self):
        return asdict(self)


def _capture_tables(rels: Sequence[LineageRelation], in_metas, out_metas, op_id):
    pos_in = {a.id: k for k, a in enumerate(in_metas)}
    pos_out = {a.id: o for o, a in enumerate(out_metas)}
    out = {}
    for rel in rels:
        k, o = pos_in.get(rel.in_array.id), pos_out.get(rel.out_array.id)
        if k is None or o is None:
            raise ValidationError(f"captured relation {rel.in_array.id}->{rel.out_array.id} does not connect "
                                  "this operation's arrays")
        if rel.in_array.shape != in_metas[k].shape or rel.out_array.shape != out_metas[o].shape:
            raise ValidationError(f"captured relation {rel.in_array.id}->{rel.out_array.id} has shapes "
                                  f"{rel.in_array.shape}->{rel.out_array.shape}, catalog has "
                                  f"{in_metas[k].shape}->{out_metas[o].shape}")
        if (k, o) in out:
            raise ValidationError(f"two captured relations for {rel.in_array.id}->{rel.out_array.id}")
        check(rel)
        out[(k, o)] = (rel, compress(rel, BACKWARD, op_id))
    if not out:
        raise ValidationError("capture holds no relations")
    return out


def _new_payload(catalog, level, tables, handles, shapes, codec):
    payload = []
    for (k, o), t in sorted(tables.items()):
        if level == GEN:
            g = generalize(t, shapes[k], t.out_array.shape, op_in_shapes=shapes, edge_input=k, mode=GEN_MODE)
            payload.append(_gen_to_json(g, handles[(k, o)], o))
        else:
            payload.append({"in": k, "out": o, "backward": asdict(handles[(k, o)])})
    return payload


def register_operation(catalog: Catalog, op_name: str, in_arrays: Sequence[str], out_arrays: Sequence[str],
                       op_args: dict | None = None,
                       captured: Sequence[LineageRelation] | Callable[[], Sequence[LineageRelation]] | None = None,
                       reuse: bool = True, m: int = 1, codec: str = "plain") -> RegistrationReport:
    """Register one operation application and store its lineage.

    With ``reuse`` a confirmed entry is served when one exists and the
    capture is not consulted (a callable capture is never invoked).
    Otherwise the capture is compressed and stored and reuse bookkeeping is
    updated for every level.
    """
    if m < 1:
        raise ValidationError("confirmation threshold m must be at least 1")
    dg = args_digest(op_args)
    with catalog.writer():
        in_metas = [catalog.array(a) for a in in_arrays]
        out_metas = [catalog.array(a) for a in out_arrays]
        if not in_metas or not out_metas:
            raise ValidationError("an operation needs at least one input and one output array")
        shapes = [a.shape for a in in_metas]
        sigs = signatures(op_name, in_arrays, shapes, op_args)
        reg = Registry(catalog)
        levels = {}
        entry = lookup(catalog, op_name, in_arrays, shapes, op_args) if reuse else None
        if entry is None and captured is None:
            raise ReuseError(f"no capture supplied and no confirmed signature can serve {op_name}")
        op_id = catalog.add_op(op_name, in_arrays, out_arrays, canonical_args(op_args), dg)
        edges, ambiguities = [], []
        if entry is not None:
            tables = predict(catalog, entry, in_metas, out_metas, op_id)
            source = entry.level
            for (k, o), t in sorted(tables.items()):
                e = EdgeKey(in_metas[k].id, out_metas[o].id, op_id)
                catalog.put_table(e, t, codec)
                catalog.put_table(e, compress(decompress(t), FORWARD, op_id), codec)
                edges.append(e.label())
            for level, sig in sigs.items():
                levels[level] = {"digest": sig.digest, "event": "served" if level == entry.level else "skipped"}
        else:
            rels = captured() if callable(captured) else captured
            cap = _capture_tables(rels, in_metas, out_metas, op_id)
            source = "capture"
            tables, handles = {}, {}
            for (k, o), (rel, bt) in sorted(cap.items()):
                e = EdgeKey(in_metas[k].id, out_metas[o].id, op_id)
                handles[(k, o)] = catalog.put_table(e, bt, codec)
                catalog.put_table(e, compress(rel, FORWARD, op_id), codec)
                catalog.put_blob_table(bt, codec)
                tables[(k, o)] = bt
                edges.append(e.label())
            for level, sig in sigs.items():
                ent = reg.get(sig)
                if ent is None:
                    payload = _new_payload(catalog, level, tables, handles, shapes, codec)
                    status = CONFIRMED if level == BASE else TEMPORARY
                    ent = ReuseEntry(sig, status, payload, seen_shapes=[tuple(shapes)])
                    event = "created"
                    if level == GEN:
                        for item in payload:
                            ambiguities += item["ambiguities"]
                else:
                    event = predict_and_confirm(catalog, ent, tables, in_metas, out_metas, m)
                reg.put(ent)
                levels[level] = {"digest": sig.digest, "event": event, "status": ent.status,
                                 "confirmations": ent.confirmations}
        return RegistrationReport(op_id, op_name, source, edges, levels, ambiguities)
