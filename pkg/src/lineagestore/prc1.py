"""
PRC1: binary container for one :class:`CompressedTable`.

Layout (all integers little-endian, see ``docs/PRC1.md``)::

    header   magic "PRC1" | version u16 | direction u8 | codec u8
             | l u16 | m u16 | n_rows u64 | l+m extents i64
             | meta_len u32 | meta (UTF-8 JSON)
    blocks   one per physical column, in ``CompressedTable.columns()``
             order with ``lo`` before ``hi``:
             col_id u16 | codec u8 | reserved u8 | raw_len u64
             | stored_len u64 | payload
    footer   n_rows u64 | crc32 u32 | magic "1CRP"

A block payload (before the block codec) is the validity bitmap
(``ceil(n/8)`` bytes, bit ``r`` of the column at byte ``r // 8``, LSB
first) followed by the valid values packed as int64. Null rules: a
missing absolute or relative cell nulls both bounds; a width-1 range
stores ``hi`` as null. The CRC covers every byte before it.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from .core import ArrayMeta
from .errors import ChecksumError, MalformedTableError
from .provrc import BACKWARD, FORWARD, CompressedTable

MAGIC = b"PRC1"
FOOTER_MAGIC = b"1CRP"
VERSION = 1
CODECS = {"plain": 0, "deflate": 1}
_CODEC_NAMES = {v: k for k, v in CODECS.items()}
_DIRS = {BACKWARD: 0, FORWARD: 1}
_DIR_NAMES = {v: k for k, v in _DIRS.items()}

_HEAD = struct.Struct("<4sHBBHHQ")
_BLOCK = struct.Struct("<HBBQQ")
_FOOT = struct.Struct("<QI4s")


def _physical_columns(t: CompressedTable):
    """Yield ``(lo, hi, valid)`` per logical column in display order."""
    p = t.key_lo.shape[1]
    for j in range(p):
        yield t.key_lo[:, j], t.key_hi[:, j], np.ones(t.n_rows, dtype=bool)
    for i in range(t.val_lo.shape[1]):
        yield t.val_lo[:, i], t.val_hi[:, i], t.val_mask[:, i]
        for j in range(p):
            yield t.rel_lo[:, i, j], t.rel_hi[:, i, j], t.rel_mask[:, i, j]


def _encode_block(values: np.ndarray, valid: np.ndarray) -> bytes:
    bitmap = np.packbits(valid.astype(np.uint8), bitorder="little").tobytes()
    return bitmap + np.ascontiguousarray(values[valid], dtype="<i8").tobytes()


def serialize(t: CompressedTable, codec: str = "plain", level: int = 6) -> bytes:
    if codec not in CODECS:
        raise ValueError(f"unknown codec {codec!r}; choose from {sorted(CODECS)}")
    meta = {"out": {"id": t.out_array.id}, "in": {"id": t.in_array.id}, "op_id": t.op_id}
    meta_b = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    parts = [_HEAD.pack(MAGIC, VERSION, _DIRS[t.direction], CODECS[codec],
                        t.out_array.dim, t.in_array.dim, t.n_rows)]
    parts.append(np.asarray(t.out_array.shape + t.in_array.shape, dtype="<i8").tobytes())
    parts.append(struct.pack("<I", len(meta_b)) + meta_b)
    col_id = 0
    for lo, hi, valid in _physical_columns(t):
        narrow = lo == hi
        for vals, ok in ((lo, valid), (hi, valid & ~narrow)):
            raw = _encode_block(vals, ok)
            stored, bcodec = raw, CODECS["plain"]
            if codec == "deflate":
                z = zlib.compress(raw, level)
                if len(z) < len(raw):
                    stored, bcodec = z, CODECS["deflate"]
            parts.append(_BLOCK.pack(col_id, bcodec, 0, len(raw), len(stored)))
            parts.append(stored)
            col_id += 1
    body = b"".join(parts)
    crc = zlib.crc32(body + struct.pack("<Q", t.n_rows))
    return body + _FOOT.pack(t.n_rows, crc, FOOTER_MAGIC)


def _decode_block(payload: bytes, n: int):
    nb = (n + 7) // 8
    if len(payload) < nb:
        raise MalformedTableError("block shorter than its validity bitmap")
    valid = np.unpackbits(np.frombuffer(payload[:nb], dtype=np.uint8), count=n, bitorder="little").astype(bool)
    vals = np.frombuffer(payload[nb:], dtype="<i8")
    if vals.shape[0] != int(valid.sum()):
        raise MalformedTableError("block value count does not match its bitmap")
    out = np.zeros(n, dtype=np.int64)
    out[valid] = vals
    return out, valid


def deserialize(data: bytes) -> CompressedTable:
    if len(data) < _HEAD.size + _FOOT.size:
        raise MalformedTableError("file too short for a PRC1 table")
    n_foot, crc, fmagic = _FOOT.unpack_from(data, len(data) - _FOOT.size)
    if fmagic != FOOTER_MAGIC:
        raise MalformedTableError("missing PRC1 footer (truncated file?)")
    if zlib.crc32(data[: len(data) - _FOOT.size] + struct.pack("<Q", n_foot)) != crc:
        raise ChecksumError("PRC1 checksum mismatch")
    magic, version, dcode, _codec, l, m, n = _HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise MalformedTableError("not a PRC1 file")
    if version != VERSION:
        raise MalformedTableError(f"unsupported PRC1 version {version}")
    if n != n_foot or dcode not in _DIR_NAMES:
        raise MalformedTableError("inconsistent PRC1 header")
    pos = _HEAD.size
    ext = np.frombuffer(data, dtype="<i8", count=l + m, offset=pos).tolist()
    pos += 8 * (l + m)
    (mlen,) = struct.unpack_from("<I", data, pos)
    pos += 4
    meta = json.loads(data[pos: pos + mlen].decode())
    pos += mlen
    direction = _DIR_NAMES[dcode]
    out_a = ArrayMeta(meta["out"]["id"], tuple(ext[:l]))
    in_a = ArrayMeta(meta["in"]["id"], tuple(ext[l:]))
    t = CompressedTable.empty(direction, out_a, in_a, n, meta.get("op_id"))
    p, q = t.key_lo.shape[1], t.val_lo.shape[1]
    targets = []
    for j in range(p):
        targets.append(("key", j, None))
    for i in range(q):
        targets.append(("val", i, None))
        targets += [("rel", i, j) for j in range(p)]
    end = len(data) - _FOOT.size
    expect = 0
    for kind, a, b in targets:
        cols = []
        for _ in range(2):
            col_id, bcodec, _r, raw_len, stored_len = _BLOCK.unpack_from(data, pos)
            pos += _BLOCK.size
            if col_id != expect or pos + stored_len > end:
                raise MalformedTableError(f"bad block header at column {expect}")
            payload = data[pos: pos + stored_len]
            pos += stored_len
            if _CODEC_NAMES.get(bcodec) == "deflate":
                payload = zlib.decompress(payload)
            elif bcodec != CODECS["plain"]:
                raise MalformedTableError(f"unknown block codec {bcodec}")
            if len(payload) != raw_len:
                raise MalformedTableError("block length mismatch")
            cols.append(_decode_block(payload, n))
            expect += 1
        (lo, lo_ok), (hi, hi_ok) = cols
        hi = np.where(hi_ok, hi, lo)
        if kind == "key":
            if not lo_ok.all():
                raise MalformedTableError("key column has nulls")
            t.key_lo[:, a], t.key_hi[:, a] = lo, hi
        elif kind == "val":
            t.val_mask[:, a] = lo_ok
            t.val_lo[:, a], t.val_hi[:, a] = np.where(lo_ok, lo, 0), np.where(lo_ok, hi, 0)
        else:
            t.rel_mask[:, a, b] = lo_ok
            t.rel_lo[:, a, b], t.rel_hi[:, a, b] = np.where(lo_ok, lo, 0), np.where(lo_ok, hi, 0)
    if pos != end:
        raise MalformedTableError("trailing bytes after last block")
    return t


def header_codec(data: bytes) -> str:
    return _CODEC_NAMES[_HEAD.unpack_from(data, 0)[3]]
