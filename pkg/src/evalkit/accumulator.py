"""Append-only columnar row store with bounded in-memory footprint.

Rows accumulate in a per-column in-memory chunk. When the encoded size of the
chunk exceeds ``spill_threshold_bytes`` it is written to a checksummed segment
file and emptied, so resident memory stays bounded no matter how many rows are
added. :meth:`ColumnarBuffer.materialize` streams segments back in append order.

Segment file layout (all integers little-endian)::

    magic            16 bytes  b"EVALKIT\\x00SPILL\\x00v1"
    schema_fp        u64       FeatureSchema.fingerprint()
    row_count        u64
    n_columns        u32
    n_columns x:
      type_code      u8        0=int 1=float 2=string 3=string-sequence 4=float-sequence
      payload_len    u64
      payload        int: i64 per row; float: f64 per row;
                     string: u32 byte length + UTF-8 bytes per row;
                     string-sequence: u32 count, then count x (u32 len + UTF-8);
                     float-sequence: u32 count, then count x f64
    checksum         u64       blake2b (8-byte digest) of every preceding byte
"""

from __future__ import annotations

import array
import hashlib
import io
import os
import shutil
import struct
import sys
import tempfile
import weakref
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence

from .errors import ChecksumMismatch, IncompatibleSchemas, SpillIOFailure
from .schema import FeatureSchema

MAGIC = b"EVALKIT\x00SPILL\x00v1"
assert len(MAGIC) == 16

DEFAULT_SPILL_THRESHOLD = 64 * 1024 * 1024
ENV_SPILL_THRESHOLD = "EVALKIT_SPILL_THRESHOLD"
ENV_SPILL_DIR = "EVALKIT_SPILL_DIR"
ENV_KEEP_SPILL = "EVALKIT_KEEP_SPILL"

TYPE_CODES = {"int": 0, "float": 1, "string": 2, "string-sequence": 3, "float-sequence": 4}

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_HEADER = struct.Struct("<QQI")
_COLHEAD = struct.Struct("<BQ")

# array.array typecodes: 'q' and 'd' are 8 bytes on every supported platform
_ARRAY_CODES = {"int": "q", "float": "d"}


def default_threshold() -> int:
    raw = os.environ.get(ENV_SPILL_THRESHOLD)
    if raw:
        try:
            value = int(raw)
        except ValueError:
            raise ValueError(f"{ENV_SPILL_THRESHOLD} must be an integer byte count, got {raw!r}") from None
        if value <= 0:
            raise ValueError(f"{ENV_SPILL_THRESHOLD} must be positive")
        return value
    return DEFAULT_SPILL_THRESHOLD


def encoded_size(col_type: str, value: Any) -> int:
    """Bytes ``value`` occupies in a segment payload."""
    if col_type in ("int", "float"):
        return 8
    if col_type == "string":
        return 4 + len(value.encode("utf-8"))
    if col_type == "string-sequence":
        return 4 + sum(4 + len(s.encode("utf-8")) for s in value)
    if col_type == "float-sequence":
        return 4 + 8 * len(value)
    raise ValueError(col_type)


def _encode_column(col_type: str, values: Sequence[Any]) -> bytes:
    if col_type in _ARRAY_CODES:
        arr = values if isinstance(values, array.array) else array.array(_ARRAY_CODES[col_type], values)
        if sys.byteorder != "little":
            arr = array.array(arr.typecode, arr)
            arr.byteswap()
        return arr.tobytes()
    out = io.BytesIO()
    if col_type == "string":
        for s in values:
            b = s.encode("utf-8")
            out.write(_U32.pack(len(b)))
            out.write(b)
    elif col_type == "string-sequence":
        for seq in values:
            out.write(_U32.pack(len(seq)))
            for s in seq:
                b = s.encode("utf-8")
                out.write(_U32.pack(len(b)))
                out.write(b)
    elif col_type == "float-sequence":
        for seq in values:
            out.write(_U32.pack(len(seq)))
            out.write(struct.pack(f"<{len(seq)}d", *seq))
    else:
        raise ValueError(col_type)
    return out.getvalue()


def _decode_column(col_type: str, payload: bytes, n: int) -> list:
    if col_type in _ARRAY_CODES:
        if len(payload) != 8 * n:
            raise SpillIOFailure(f"{col_type} column payload has {len(payload)} bytes for {n} rows")
        arr = array.array(_ARRAY_CODES[col_type])
        arr.frombytes(payload)
        if sys.byteorder != "little":
            arr.byteswap()
        return arr.tolist()
    view = memoryview(payload)
    pos = 0
    out: list = []

    def read_str() -> str:
        nonlocal pos
        (length,) = _U32.unpack_from(view, pos)
        pos += 4
        s = bytes(view[pos:pos + length]).decode("utf-8")
        pos += length
        return s

    try:
        for _ in range(n):
            if col_type == "string":
                out.append(read_str())
            elif col_type == "string-sequence":
                (count,) = _U32.unpack_from(view, pos)
                pos += 4
                out.append([read_str() for _ in range(count)])
            elif col_type == "float-sequence":
                (count,) = _U32.unpack_from(view, pos)
                pos += 4
                out.append(list(struct.unpack_from(f"<{count}d", view, pos)))
                pos += 8 * count
            else:
                raise SpillIOFailure(f"unknown column type {col_type!r}")
    except (struct.error, UnicodeDecodeError) as exc:
        raise SpillIOFailure(f"malformed {col_type} column payload: {exc}") from exc
    if pos != len(payload):
        raise SpillIOFailure(f"{col_type} column payload has {len(payload) - pos} trailing bytes")
    return out


def _checksum(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class SpillSegment:
    path: Path
    row_count: int
    checksum: int
    schema_fingerprint: int
    nbytes: int


def write_segment(path: Path, schema: FeatureSchema, columns: Mapping[str, Sequence[Any]], n: int) -> SpillSegment:
    buf = io.BytesIO()
    buf.write(MAGIC)
    fp = schema.fingerprint()
    buf.write(_HEADER.pack(fp, n, len(schema.columns)))
    for name, typ in schema.columns:
        payload = _encode_column(typ, columns[name])
        buf.write(_COLHEAD.pack(TYPE_CODES[typ], len(payload)))
        buf.write(payload)
    body = buf.getvalue()
    checksum = _checksum(body)
    data = body + _U64.pack(checksum)
    try:
        with open(path, "xb") as fh:
            fh.write(data)
    except OSError as exc:
        raise SpillIOFailure(f"cannot write spill segment {path}: {exc}") from exc
    return SpillSegment(Path(path), n, checksum, fp, len(data))


def read_segment(segment: SpillSegment, schema: FeatureSchema) -> dict[str, list]:
    try:
        data = Path(segment.path).read_bytes()
    except OSError as exc:
        raise SpillIOFailure(f"cannot read spill segment {segment.path}: {exc}") from exc
    if len(data) < len(MAGIC) + _HEADER.size + _U64.size:
        raise SpillIOFailure(f"spill segment {segment.path} is truncated")
    body, trailer = data[:-8], data[-8:]
    actual = _checksum(body)
    (stored,) = _U64.unpack(trailer)
    if actual != segment.checksum or stored != segment.checksum:
        raise ChecksumMismatch(
            f"spill segment {segment.path} failed checksum verification "
            f"(expected {segment.checksum:016x}, file trailer {stored:016x}, content {actual:016x})")
    if body[:16] != MAGIC:
        raise SpillIOFailure(f"spill segment {segment.path} has a bad magic header")
    fp, n, ncols = _HEADER.unpack_from(body, 16)
    if fp != schema.fingerprint() or fp != segment.schema_fingerprint:
        raise SpillIOFailure(f"spill segment {segment.path} belongs to a different schema")
    if n != segment.row_count or ncols != len(schema.columns):
        raise SpillIOFailure(f"spill segment {segment.path} header disagrees with its record")
    pos = 16 + _HEADER.size
    out: dict[str, list] = {}
    for name, typ in schema.columns:
        code, length = _COLHEAD.unpack_from(body, pos)
        pos += _COLHEAD.size
        if code != TYPE_CODES[typ]:
            raise SpillIOFailure(f"column {name!r} has type code {code}, expected {TYPE_CODES[typ]}")
        out[name] = _decode_column(typ, body[pos:pos + length], n)
        pos += length
    if pos != len(body):
        raise SpillIOFailure(f"spill segment {segment.path} has trailing bytes")
    return out


def _cleanup_dir(path: str) -> None:
    shutil.rmtree(path, ignore_errors=True)


@dataclass
class BufferStats:
    """Allocation accounting, in encoded bytes."""

    peak_chunk_bytes: int = 0
    spilled_bytes: int = 0
    spills: int = 0


class ColumnarBuffer:
    """Append-only typed column store that spills to disk past a byte threshold."""

    def __init__(
        self,
        schema: FeatureSchema,
        spill_threshold_bytes: int | None = None,
        spill_dir: str | os.PathLike | None = None,
        keep_spill: bool | None = None,
    ):
        self.schema = schema
        self.spill_threshold_bytes = spill_threshold_bytes or default_threshold()
        if self.spill_threshold_bytes <= 0:
            raise ValueError("spill threshold must be positive")
        self._spill_parent = spill_dir if spill_dir is not None else os.environ.get(ENV_SPILL_DIR)
        if keep_spill is None:
            keep_spill = os.environ.get(ENV_KEEP_SPILL, "") not in ("", "0")
        self.keep_spill = keep_spill
        self._dir: Path | None = None
        self._finalizer: weakref.finalize | None = None
        self.segments: list[SpillSegment] = []
        self.stats = BufferStats()
        self._reset_chunk()

    def _reset_chunk(self) -> None:
        self._chunk: dict[str, Any] = {
            name: array.array(_ARRAY_CODES[typ]) if typ in _ARRAY_CODES else []
            for name, typ in self.schema.columns
        }
        self._chunk_rows = 0
        self._chunk_bytes = 0

    @property
    def row_count(self) -> int:
        return self._chunk_rows + sum(s.row_count for s in self.segments)

    @property
    def in_memory_rows(self) -> int:
        return self._chunk_rows

    @property
    def in_memory_bytes(self) -> int:
        return self._chunk_bytes

    @property
    def spill_directory(self) -> Path | None:
        return self._dir

    def __len__(self) -> int:
        return self.row_count

    def _ensure_dir(self) -> Path:
        if self._dir is None:
            try:
                if self._spill_parent is not None:
                    Path(self._spill_parent).mkdir(parents=True, exist_ok=True)
                self._dir = Path(tempfile.mkdtemp(prefix="evalkit-spill-", dir=self._spill_parent))
            except OSError as exc:
                raise SpillIOFailure(f"cannot create spill directory: {exc}") from exc
            if not self.keep_spill:
                self._finalizer = weakref.finalize(self, _cleanup_dir, str(self._dir))
        return self._dir

    def append(self, rows: Mapping[str, Sequence[Any]]) -> None:
        """Validate ``rows`` against the schema and append them."""
        self._append_valid(self.schema.validate_batch(rows))

    def _append_valid(self, cols: Mapping[str, Sequence[Any]]) -> None:
        n = len(next(iter(cols.values())))
        added = 0
        for name, typ in self.schema.columns:
            col = cols[name]
            self._chunk[name].extend(col)
            if typ in _ARRAY_CODES:
                added += 8 * n
            else:
                added += sum(encoded_size(typ, v) for v in col)
        self._chunk_rows += n
        self._chunk_bytes += added
        self.stats.peak_chunk_bytes = max(self.stats.peak_chunk_bytes, self._chunk_bytes)
        if self._chunk_bytes > self.spill_threshold_bytes:
            self.flush()

    def flush(self) -> SpillSegment | None:
        """Write the in-memory chunk to a new segment (no-op when empty)."""
        if self._chunk_rows == 0:
            return None
        directory = self._ensure_dir()
        path = directory / f"segment-{len(self.segments):06d}.bin"
        seg = write_segment(path, self.schema, self._chunk, self._chunk_rows)
        self.segments.append(seg)
        self.stats.spilled_bytes += seg.nbytes
        self.stats.spills += 1
        self._reset_chunk()
        return seg

    def _adopt_segment(self, seg: SpillSegment) -> None:
        """Copy a verified segment from another buffer into this one."""
        read_segment(seg, self.schema)
        directory = self._ensure_dir()
        path = directory / f"segment-{len(self.segments):06d}.bin"
        try:
            shutil.copyfile(seg.path, path)
        except OSError as exc:
            raise SpillIOFailure(f"cannot copy spill segment {seg.path}: {exc}") from exc
        self.segments.append(SpillSegment(path, seg.row_count, seg.checksum, seg.schema_fingerprint, seg.nbytes))

    def iter_chunks(self) -> Iterator[dict[str, list]]:
        """Yield column maps in append order: each segment, then the in-memory chunk."""
        for seg in self.segments:
            yield read_segment(seg, self.schema)
        if self._chunk_rows:
            yield {name: list(col) for name, col in self._chunk.items()}

    def materialize(self) -> dict[str, list]:
        out: dict[str, list] = {name: [] for name in self.schema.names}
        for chunk in self.iter_chunks():
            for name in out:
                out[name].extend(chunk[name])
        return out

    def clear(self) -> None:
        for seg in self.segments:
            try:
                Path(seg.path).unlink()
            except FileNotFoundError:
                pass
        self.segments = []
        self._reset_chunk()

    def close(self) -> None:
        self.clear()
        if self._finalizer is not None:
            self._finalizer()
        self._dir = None
        self._finalizer = None

    def __enter__(self) -> "ColumnarBuffer":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __repr__(self) -> str:
        return (f"ColumnarBuffer(rows={self.row_count}, segments={len(self.segments)}, "
                f"chunk_bytes={self._chunk_bytes}, threshold={self.spill_threshold_bytes})")


def merge(partitions: Sequence[ColumnarBuffer], spill_threshold_bytes: int | None = None,
          spill_dir: str | os.PathLike | None = None) -> ColumnarBuffer:
    """Concatenate partitions, in list order, into a new buffer.

    Sources are left untouched; their segments are verified and copied rather
    than shared so each buffer owns its files.
    """
    if not partitions:
        raise ValueError("merge needs at least one partition")
    schema = partitions[0].schema
    for p in partitions[1:]:
        if p.schema != schema:
            raise IncompatibleSchemas(f"cannot merge partitions with schemas {schema.to_json()} "
                                      f"and {p.schema.to_json()}")
    threshold = spill_threshold_bytes or partitions[0].spill_threshold_bytes
    out = ColumnarBuffer(schema, threshold, spill_dir)
    for p in partitions:
        for seg in p.segments:
            out.flush()
            out._adopt_segment(seg)
        if p.in_memory_rows:
            out._append_valid({name: list(col) for name, col in p._chunk.items()})
    return out
