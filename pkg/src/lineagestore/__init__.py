"""Compressed fine-grained array lineage: storage, in-situ queries and reuse."""

from .core import ArrayMeta, IndexRange, LineageRelation, LineageRow
from .errors import LineageError
from .provrc import BACKWARD, FORWARD, CompressedTable, compress, decompress

__version__ = "0.1.0"

__all__ = ["ArrayMeta", "IndexRange", "LineageRelation", "LineageRow", "LineageError",
           "BACKWARD", "FORWARD", "CompressedTable", "compress", "decompress"]
