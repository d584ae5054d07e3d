"""On-disk rainbow tables.

Layout (all little-endian)::

    offset  size  field
    0       4     magic b"A5RT"
    4       2     format version
    6       1     state width
    7       1     mode (0 = FIXED, 1 = DP)
    8       4     n_colors
    12      4     steps_per_color
    16      4     dp_bits
    20      4     max_segment_steps
    24      8     table_id
    32      8     reduction_seed
    40      8     record_count
    48      4     CRC-32 of bytes 0..47
    52      16*n  records: end (u64) then start (u64), strictly ascending by end
"""

from __future__ import annotations

import heapq
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .tmto import ChainRecord, Mode, TableParams

MAGIC = b"A5RT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHBBIIIIQQQ")
HEADER_SIZE = _HEADER.size + 4
RECORD_SIZE = 16
RECORD_DTYPE = np.dtype([("end", "<u8"), ("start", "<u8")])
SORT_CHECK_FULL_LIMIT = 1 << 22
_MERGE_PAGE = 1 << 16


class TableFormatError(Exception):
    def __init__(self, message: str, path=None, offset: int | None = None):
        self.path = path
        self.offset = offset
        where = f" at offset {offset}" if offset is not None else ""
        super().__init__(f"{path}{where}: {message}" if path is not None else message + where)


class BadMagic(TableFormatError):
    pass


class VersionMismatch(TableFormatError):
    pass


class ChecksumMismatch(TableFormatError):
    pass


class UnsortedRecords(TableFormatError):
    pass


class TruncatedTable(TableFormatError):
    pass


class ParamsMismatch(ValueError):
    pass


def table_filename(prefix: str, table_id: int) -> str:
    return f"{prefix}_t{table_id}.a5rt"


def encode_header(params: TableParams, record_count: int) -> bytes:
    body = _HEADER.pack(MAGIC, FORMAT_VERSION, params.state_width, int(params.mode),
                        params.n_colors, params.steps_per_color, params.dp_bits,
                        params.max_segment_steps, params.table_id, params.reduction_seed,
                        record_count)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_header(raw: bytes, path=None) -> tuple[TableParams, int]:
    if len(raw) < HEADER_SIZE:
        raise TruncatedTable(f"header needs {HEADER_SIZE} bytes, file has {len(raw)}", path, len(raw))
    body = raw[:_HEADER.size]
    (magic, version, width, mode, n_colors, steps, dp_bits, max_seg,
     table_id, seed, count) = _HEADER.unpack(body)
    if magic != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, found {magic!r}", path, 0)
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"expected format version {FORMAT_VERSION}, found {version}", path, 4)
    (crc,) = struct.unpack_from("<I", raw, _HEADER.size)
    if crc != zlib.crc32(body):
        raise ChecksumMismatch(f"header CRC {crc:#010x} != computed {zlib.crc32(body):#010x}",
                               path, _HEADER.size)
    try:
        params = TableParams(width, n_colors, steps, dp_bits, max_seg, Mode(mode), table_id, seed)
    except ValueError as exc:
        raise TableFormatError(f"invalid parameters in header: {exc}", path, 6) from None
    return params, count


def _as_arrays(records) -> tuple[np.ndarray, np.ndarray]:
    if hasattr(records, "ends") and hasattr(records, "starts"):
        return np.asarray(records.ends, dtype=np.uint64), np.asarray(records.starts, dtype=np.uint64)
    recs = list(records)
    ends = np.array([r.end for r in recs], dtype=np.uint64)
    starts = np.array([r.start for r in recs], dtype=np.uint64)
    return ends, starts


def _atomic_writer(path: Path):
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    return os.fdopen(fd, "wb"), Path(tmp)


def write_table(path, params: TableParams, records) -> dict:
    """Write a sorted table atomically.

    ``records`` is either an object with ``ends``/``starts`` arrays or an
    iterable of :class:`ChainRecord`.
    """
    path = Path(path)
    ends, starts = _as_arrays(records)
    if len(ends) != len(starts):
        raise ValueError("ends and starts differ in length")
    if len(ends) > 1 and not np.all(ends[1:] > ends[:-1]):
        raise ValueError("records must be strictly ascending by end")
    limit = np.uint64(params.mask)
    if len(ends) and (ends.max() > limit or starts.max() > limit):
        raise ValueError(f"record values exceed the {params.state_width}-bit state")
    out = np.empty(len(ends), dtype=RECORD_DTYPE)
    out["end"] = ends
    out["start"] = starts
    fh, tmp = _atomic_writer(path)
    try:
        with fh:
            fh.write(encode_header(params, len(out)))
            fh.write(out.tobytes())
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
    return {"path": str(path), "records": len(out), "bytes": HEADER_SIZE + RECORD_SIZE * len(out)}


@dataclass
class TableFile:
    """A validated table file with memory-mapped records."""

    path: Path
    params: TableParams
    _records: np.ndarray

    @property
    def ends(self) -> np.ndarray:
        return self._records["end"]

    @property
    def starts(self) -> np.ndarray:
        return self._records["start"]

    def __len__(self) -> int:
        return len(self._records)

    def __getitem__(self, i: int) -> ChainRecord:
        rec = self._records[i]
        return ChainRecord(int(rec["start"]), int(rec["end"]))

    def __iter__(self) -> Iterator[ChainRecord]:
        for i in range(len(self)):
            yield self[i]

    def pages(self, size: int = _MERGE_PAGE) -> Iterator[np.ndarray]:
        for i in range(0, len(self), size):
            yield np.array(self._records[i:i + size])


def read_table(path, check_sorted: bool | None = None) -> TableFile:
    """Open and validate a table file.

    Sortedness is checked in full for files up to ``SORT_CHECK_FULL_LIMIT``
    records and on a strided sample above that, unless ``check_sorted`` forces
    one or the other.
    """
    path = Path(path)
    size = path.stat().st_size
    with open(path, "rb") as fh:
        raw = fh.read(HEADER_SIZE)
    params, count = decode_header(raw, path)
    expected = HEADER_SIZE + RECORD_SIZE * count
    if size != expected:
        raise TruncatedTable(f"expected {expected} bytes for {count} records, found {size}", path, size)
    if count:
        records = np.memmap(path, dtype=RECORD_DTYPE, mode="r", offset=HEADER_SIZE, shape=(count,))
    else:
        records = np.zeros(0, dtype=RECORD_DTYPE)
    full = count <= SORT_CHECK_FULL_LIMIT if check_sorted is None else check_sorted
    if count > 1:
        if full:
            ends = records["end"]
            bad = np.flatnonzero(ends[1:] <= ends[:-1])
        else:
            idx = np.unique(np.linspace(0, count - 1, num=min(count, 1 << 16)).astype(np.int64))
            ends = records["end"][idx]
            bad = idx[np.flatnonzero(ends[1:] <= ends[:-1])]
        if bad.size:
            i = int(bad[0]) + 1
            raise UnsortedRecords(f"record {i} does not ascend by end", path, HEADER_SIZE + RECORD_SIZE * i)
    return TableFile(path, params, records)


def find_by_end(table, end_value: int) -> int | None:
    """Binary search the end column; returns the paired start or None."""
    ends = table.ends
    i = int(np.searchsorted(ends, np.uint64(end_value)))
    if i < len(ends) and int(ends[i]) == end_value:
        return int(table.starts[i])
    return None


def find_many(table, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`find_by_end`: hit mask and record index per value."""
    values = np.asarray(values, dtype=np.uint64)
    ends = table.ends
    if len(ends) == 0:
        return np.zeros(len(values), dtype=bool), np.zeros(len(values), dtype=np.int64)
    idx = np.searchsorted(ends, values)
    clipped = np.minimum(idx, len(ends) - 1)
    hit = (idx < len(ends)) & (np.asarray(ends[clipped]) == values)
    return hit, clipped


def _record_stream(table: TableFile) -> Iterator[tuple[int, int]]:
    for page in table.pages():
        yield from zip(page["end"].tolist(), page["start"].tolist())


def merge_shards(shard_paths: Sequence, out_path) -> dict:
    """k-way merge of sorted shards into one table, keeping the smallest start per end."""
    if not shard_paths:
        raise ValueError("no shards to merge")
    tables = [read_table(p) for p in shard_paths]
    params = tables[0].params
    for t in tables[1:]:
        if t.params != params:
            raise ParamsMismatch(f"{t.path} parameters differ from {tables[0].path}")
    out_path = Path(out_path)
    fh, tmp = _atomic_writer(out_path)
    n_in = sum(len(t) for t in tables)
    n_out = 0
    try:
        with fh:
            fh.write(b"\0" * HEADER_SIZE)
            last = None
            buf = bytearray()
            for end, start in heapq.merge(*(_record_stream(t) for t in tables)):
                if end == last:
                    continue
                last = end
                buf += struct.pack("<QQ", end, start)
                n_out += 1
                if len(buf) >= RECORD_SIZE * _MERGE_PAGE:
                    fh.write(buf)
                    buf.clear()
            fh.write(buf)
            fh.seek(0)
            fh.write(encode_header(params, n_out))
        os.replace(tmp, out_path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
    return {"path": str(out_path), "records_in": n_in, "records_out": n_out, "merged": n_in - n_out}


def load_table_dir(directory, pattern: str = "*.a5rt") -> list[TableFile]:
    tables = [read_table(p) for p in sorted(Path(directory).glob(pattern))]
    return sorted(tables, key=lambda t: t.params.table_id)
