"""Two-layer persistent log.

The region is laid out as::

    [superblock + chunk table][schema region][chunk 0][chunk 1]...

and every chunk is ``[CLog extent][DLog extent]``. A chunk holds rows of a
single schema, so its delta rows can be parsed without chasing chains.
Complete rows go to the schema's open chunk; a delta row always lands in the
DLog of the chunk that owns the row it chains to.
"""

from __future__ import annotations

import logging
import struct
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

from focus.codec import (
    ADDR,
    COMPLETE_HEADER,
    DELTA_PREFIX,
    INLINE_MAX,
    INVALID_BIT,
    KV_SIZE_MASK,
    VAR_HEAD,
    CompleteRowImage,
    DeltaRowImage,
    RowImage,
    relocate,
)
from focus.errors import (
    BadAddress,
    BadSuperblock,
    CapacityExhausted,
    ChunkBusy,
    DLogFull,
    SchemaRegionFull,
)
from focus.pmem import PmemRegion
from focus.schema import VAR_HEAD_SIZE, HierKey, SchemaDef, SchemaRegistry, decode_schema_record

logger = logging.getLogger(__name__)

MAGIC = b"FOCS"
VERSION = 1
SUPERBLOCK = struct.Struct("<4sIIIIII")
TABLE_OFFSET = 64
TABLE_ENTRY = struct.Struct("<IIQ")
PAGE = 4096

CHUNK_NEVER_USED = 0
CHUNK_IN_USE = 1
CHUNK_FREE = 2
GC_RESERVE_CHUNKS = 1


def _align(n: int, a: int) -> int:
    return (n + a - 1) // a * a


@dataclass
class LogConfig:
    clog_size: int = 1 << 20
    dlog_size: int = 256 << 10
    schema_region_size: int = 64 << 10
    gc_live_threshold: float = 0.25
    gc_utilization_threshold: float = 0.8


@dataclass
class Chunk:
    chunk_id: int
    schema_id: int
    epoch: int
    clog_base: int
    clog_cap: int
    dlog_base: int
    dlog_cap: int
    clog_cursor: int = 0
    dlog_cursor: int = 0
    live_bytes: int = 0
    prev: Optional[int] = None
    next: Optional[int] = None
    busy: bool = False

    @property
    def capacity(self) -> int:
        return self.clog_cap + self.dlog_cap

    def in_clog(self, addr: int) -> bool:
        return self.clog_base <= addr < self.clog_base + self.clog_cursor

    def in_dlog(self, addr: int) -> bool:
        return self.dlog_base <= addr < self.dlog_base + self.dlog_cursor


@dataclass
class ScannedRow:
    addr: int
    size: int
    key: Optional[HierKey] = None  # complete rows only
    valid: bool = True
    prev: Optional[int] = None  # delta rows only
    chunk_epoch: int = 0


@dataclass
class RecoveryScan:
    complete: list[ScannedRow] = field(default_factory=list)
    deltas: list[ScannedRow] = field(default_factory=list)


class PersistentLog:
    def __init__(self, region: PmemRegion, registry: SchemaRegistry, config: LogConfig) -> None:
        self.region = region
        self.registry = registry
        self.config = config
        self._lock = threading.RLock()
        self.chunks: dict[int, Chunk] = {}
        self._open: dict[int, int] = {}  # schema_id -> open chunk id
        self._states: list[int] = []
        self._next_epoch = 1
        self._schema_used = 0
        self._geometry()

    # -- layout ------------------------------------------------------------
    def _geometry(self) -> None:
        cfg = self.config
        self.chunk_size = cfg.clog_size + cfg.dlog_size
        if cfg.clog_size % 64 or cfg.dlog_size % 64:
            raise ValueError("extent sizes must be multiples of 64")
        cap = self.region.capacity
        n = max(0, (cap - PAGE) // self.chunk_size)
        while n > 0:
            base = self._data_base(n)
            if base + n * self.chunk_size <= cap:
                break
            n -= 1
        if n == 0:
            raise CapacityExhausted("region too small for a single chunk")
        self.max_chunks = n
        self.schema_base = _align(TABLE_OFFSET + TABLE_ENTRY.size * n, PAGE)
        self.data_base = self._data_base(n)

    def _data_base(self, n: int) -> int:
        return _align(_align(TABLE_OFFSET + TABLE_ENTRY.size * n, PAGE) + self.config.schema_region_size, PAGE)

    def _chunk_bases(self, cid: int) -> tuple[int, int]:
        base = self.data_base + cid * self.chunk_size
        return base, base + self.config.clog_size

    @classmethod
    def create(cls, region: PmemRegion, registry: SchemaRegistry, config: Optional[LogConfig] = None) -> "PersistentLog":
        log = cls(region, registry, config or LogConfig())
        cfg = log.config
        log._states = [CHUNK_NEVER_USED] * log.max_chunks
        sb = SUPERBLOCK.pack(MAGIC, VERSION, log.max_chunks, cfg.clog_size, cfg.dlog_size,
                             cfg.schema_region_size, log.data_base)
        region.persist(0, sb)
        region.persist(log.schema_base, struct.pack("<I", 0))
        registry._persist = log.persist_schema
        return log

    @classmethod
    def open(cls, region: PmemRegion, registry: SchemaRegistry) -> tuple["PersistentLog", RecoveryScan]:
        """Attach to an existing region, reload schemas and scan every live chunk."""
        raw = region.read(0, SUPERBLOCK.size)
        magic, version, max_chunks, clog, dlog, sregion, data_base = SUPERBLOCK.unpack(raw)
        if magic != MAGIC or version != VERSION:
            raise BadSuperblock(f"magic={magic!r} version={version}")
        cfg = LogConfig(clog_size=clog, dlog_size=dlog, schema_region_size=sregion)
        log = cls(region, registry, cfg)
        if log.max_chunks != max_chunks or log.data_base != data_base:
            raise BadSuperblock("geometry does not match region capacity")
        log._load_schemas()
        registry._persist = log.persist_schema
        scan = log._scan()
        return log, scan

    # -- schema region -----------------------------------------------------
    def persist_schema(self, record: bytes) -> None:
        with self._lock:
            end = 4 + self._schema_used + 2 + len(record)
            if end > self.config.schema_region_size:
                raise SchemaRegionFull()
            pos = self.schema_base + 4 + self._schema_used
            self.region.persist(pos, struct.pack("<H", len(record)) + record)
            self._schema_used += 2 + len(record)
            self.region.persist(self.schema_base, struct.pack("<I", self._schema_used))

    def _load_schemas(self) -> None:
        (used,) = struct.unpack("<I", self.region.read(self.schema_base, 4))
        raw = self.region.read(self.schema_base + 4, used)
        pos = 0
        while pos < used:
            (n,) = struct.unpack_from("<H", raw, pos)
            schema, _ = decode_schema_record(raw[pos + 2:pos + 2 + n])
            self.registry.load(schema)
            pos += 2 + n
        self._schema_used = used

    # -- chunk management --------------------------------------------------
    def _write_table_entry(self, cid: int, state: int, schema_id: int, epoch: int) -> None:
        self.region.persist(TABLE_OFFSET + cid * TABLE_ENTRY.size, TABLE_ENTRY.pack(state, schema_id, epoch))
        self._states[cid] = state

    def _allocate_chunk(self, schema_id: int, reserve: int = 0) -> Chunk:
        spare = [cid for cid, state in enumerate(self._states) if state != CHUNK_IN_USE]
        if len(spare) <= reserve:
            raise CapacityExhausted("no free chunk")
        cid = spare[0]
        state = self._states[cid]
        clog_base, dlog_base = self._chunk_bases(cid)
        if state == CHUNK_FREE:
            # recycled extents must read as zero so recovery scans stop at the old cursor
            self.region.write_at(clog_base, bytes(self.chunk_size))
            self.region.flush_range(clog_base, self.chunk_size)
            self.region.fence()
        epoch = self._next_epoch
        self._next_epoch += 1
        self._write_table_entry(cid, CHUNK_IN_USE, schema_id, epoch)
        chunk = Chunk(cid, schema_id, epoch, clog_base, self.config.clog_size, dlog_base, self.config.dlog_size)
        prev_id = self._open.get(schema_id)
        if prev_id is not None and prev_id in self.chunks:
            chunk.prev = prev_id
            self.chunks[prev_id].next = cid
        self.chunks[cid] = chunk
        self._open[schema_id] = cid
        logger.debug("allocated chunk %d for schema %d (epoch %d)", cid, schema_id, epoch)
        return chunk

    def chunk_of(self, addr: int) -> Chunk:
        cid = (addr - self.data_base) // self.chunk_size
        chunk = self.chunks.get(cid) if addr >= self.data_base else None
        if chunk is None:
            raise BadAddress(f"{addr:#x} is not inside a live chunk")
        return chunk

    def utilization(self) -> float:
        return len(self.chunks) / self.max_chunks

    def gc_candidates(self) -> list[int]:
        """Sealed chunks whose live data fell below the configured threshold."""
        if self.utilization() < self.config.gc_utilization_threshold:
            return []
        with self._lock:
            open_ids = set(self._open.values())
            found = [c for c in self.chunks.values()
                     if c.chunk_id not in open_ids and not c.busy
                     and c.live_bytes / c.clog_cap < self.config.gc_live_threshold]
            return [c.chunk_id for c in sorted(found, key=lambda c: c.live_bytes)]

    # -- appends -----------------------------------------------------------
    def append_complete(self, image: CompleteRowImage, schema: SchemaDef, *, relocation: bool = False) -> int:
        """Append a complete row; only GC relocation may take the last free chunk."""
        size = len(image)
        if size > self.config.clog_size:
            raise CapacityExhausted(f"row of {size} bytes exceeds CLog extent")
        with self._lock:
            cid = self._open.get(schema.schema_id)
            chunk = self.chunks.get(cid) if cid is not None else None
            if chunk is None or chunk.clog_cursor + size > chunk.clog_cap:
                chunk = self._allocate_chunk(schema.schema_id, 0 if relocation else GC_RESERVE_CHUNKS)
            addr = chunk.clog_base + chunk.clog_cursor
            chunk.clog_cursor += size
            chunk.live_bytes += size
        image = relocate(image, schema, addr)
        self._persist_row(addr, image.raw)
        return addr

    def _persist_row(self, addr: int, raw: bytes) -> None:
        # body first, leading size word last: a row is visible to the recovery
        # scan only once every byte of it is durable
        self.region.write_at(addr + 2, raw[2:])
        self.region.flush_range(addr + 2, len(raw) - 2)
        self.region.fence()
        self.region.persist(addr, raw[:2])

    def append_delta(self, image: DeltaRowImage, schema: SchemaDef) -> int:
        """Append into the DLog of the chunk owning ``image.chain_pointer``."""
        size = len(image)
        with self._lock:
            chunk = self.chunk_of(image.chain_pointer)
            if chunk.dlog_cursor + size > chunk.dlog_cap:
                raise DLogFull(chunk.chunk_id)
            addr = chunk.dlog_base + chunk.dlog_cursor
            chunk.dlog_cursor += size
        image = relocate(image, schema, addr)
        self._persist_row(addr, image.raw)
        return addr

    def set_chain_pointer(self, addr: int, meta_size: int, prev: int) -> None:
        self.region.persist(addr + meta_size - 8, ADDR.pack(prev))

    def mark_invalid(self, addr: int) -> None:
        chunk = self.chunk_of(addr)
        if not chunk.in_clog(addr):
            raise BadAddress(f"{addr:#x} is not a complete row")
        word, key_len = COMPLETE_HEADER.unpack(self.region.read(addr, 4))
        if word == 0:
            raise BadAddress(f"{addr:#x} holds no row")
        if word & INVALID_BIT:
            return
        self.region.persist(addr, struct.pack("<H", word | INVALID_BIT))
        with self._lock:
            chunk.live_bytes -= 4 + key_len + (word & KV_SIZE_MASK)

    # -- reads -------------------------------------------------------------
    def is_complete(self, addr: int) -> bool:
        chunk = self.chunk_of(addr)
        if chunk.in_clog(addr):
            return True
        if chunk.in_dlog(addr):
            return False
        raise BadAddress(f"{addr:#x} is outside the written extents")

    def schema_of(self, addr: int) -> SchemaDef:
        return self.registry.get(self.chunk_of(addr).schema_id)

    def read_row(self, addr: int) -> RowImage:
        if self.is_complete(addr):
            head = self.region.read(addr, 4)
            word, key_len = COMPLETE_HEADER.unpack(head)
            if word == 0:
                raise BadAddress(f"{addr:#x} holds no row")
            rest = self.region.read(addr + 4, key_len + (word & KV_SIZE_MASK))
            return CompleteRowImage(head + rest, addr)
        schema = self.schema_of(addr)
        meta = self._read_delta_meta(addr)
        parts = [meta]
        pos = addr + len(meta)
        count = DELTA_PREFIX.unpack_from(meta)[1]
        for fid in struct.unpack_from(f"<{count}H", meta, 4):
            f = schema.fields[fid]
            if f.is_fixed:
                parts.append(self.region.read(pos, f.size))
                pos += f.size
            else:
                h = self.region.read(pos, VAR_HEAD_SIZE)
                parts.append(h)
                pos += VAR_HEAD_SIZE
                size = VAR_HEAD.unpack(h)[1]
                if size > INLINE_MAX:
                    parts.append(self.region.read(pos, size))
                    pos += size
        return DeltaRowImage(b"".join(parts), addr)

    def _read_delta_meta(self, addr: int) -> bytes:
        prefix = self.region.read(addr, 4)
        meta_size = DELTA_PREFIX.unpack(prefix)[0]
        if meta_size == 0:
            raise BadAddress(f"{addr:#x} holds no row")
        return prefix + self.region.read(addr + 4, meta_size - 4)

    def _read_var_value(self, head_addr: int) -> bytes:
        _t, size, payload = VAR_HEAD.unpack(self.region.read(head_addr, VAR_HEAD_SIZE))
        if size <= INLINE_MAX:
            return payload[:size]
        return self.region.read(ADDR.unpack(payload)[0], size)

    def read_fields(self, addr: int, schema: SchemaDef, wanted) -> tuple[dict[int, bytes], Optional[int]]:
        """Read only the slices of ``wanted`` fields present in the row at ``addr``.

        Returns the found values and the chain pointer (``None`` for a complete row).
        """
        found: dict[int, bytes] = {}
        if self.is_complete(addr):
            word, key_len = COMPLETE_HEADER.unpack(self.region.read(addr, 4))
            if word == 0:
                raise BadAddress(f"{addr:#x} holds no row")
            start = addr + 4 + key_len
            for fid in sorted(wanted):
                f = schema.fields[fid]
                pos = start + schema.fixed_offsets[fid]
                found[fid] = self.region.read(pos, f.size) if f.is_fixed else self._read_var_value(pos)
            return found, None
        meta = self._read_delta_meta(addr)
        meta_size, count = DELTA_PREFIX.unpack_from(meta)
        ids = struct.unpack_from(f"<{count}H", meta, 4)
        prev = ADDR.unpack_from(meta, meta_size - 8)[0]
        hits = wanted.intersection(ids)
        if hits:
            pos = addr + meta_size
            last = max(hits)
            for fid in ids:
                if fid > last:
                    break
                f = schema.fields[fid]
                if f.is_fixed:
                    if fid in hits:
                        found[fid] = self.region.read(pos, f.size)
                    pos += f.size
                else:
                    _t, size, payload = VAR_HEAD.unpack(self.region.read(pos, VAR_HEAD_SIZE))
                    if fid in hits:
                        found[fid] = payload[:size] if size <= INLINE_MAX else self.region.read(pos + VAR_HEAD_SIZE, size)
                    pos += VAR_HEAD_SIZE + (size if size > INLINE_MAX else 0)
        return found, prev

    def write_in_place(self, addr: int, data: bytes) -> None:
        """Unflushed store into an existing row; the caller owns flush + fence."""
        self.region.write_at(addr, data)

    # -- iteration / gc ----------------------------------------------------
    def iter_complete(self, chunk: Chunk) -> Iterator[tuple[int, int, bool]]:
        """Yield (addr, size, valid) for every complete row in a chunk's CLog."""
        pos = 0
        while pos < chunk.clog_cursor:
            addr = chunk.clog_base + pos
            word, key_len = COMPLETE_HEADER.unpack(self.region.read(addr, 4))
            size = 4 + key_len + (word & KV_SIZE_MASK)
            yield addr, size, not word & INVALID_BIT
            pos += size

    def row_key(self, addr: int) -> HierKey:
        _w, key_len = COMPLETE_HEADER.unpack(self.region.read(addr, 4))
        return HierKey.decode(self.region.read(addr + 4, key_len))

    def relocate_rows(self, chunk_id: int, move_row: Callable[[int, int], bool]) -> int:
        """Seal a chunk and hand each valid complete row to ``move_row(addr, size)``.

        ``move_row`` returns True when it re-appended the row elsewhere. Returns
        the number of bytes copied out.
        """
        with self._lock:
            chunk = self.chunks.get(chunk_id)
            if chunk is None:
                raise BadAddress(f"chunk {chunk_id} is not in use")
            if chunk.busy:
                raise ChunkBusy(chunk_id)
            chunk.busy = True
            if self._open.get(chunk.schema_id) == chunk_id:
                del self._open[chunk.schema_id]
        try:
            copied = 0
            for addr, size, valid in list(self.iter_complete(chunk)):
                if valid and move_row(addr, size):
                    copied += size
            return copied
        finally:
            chunk.busy = False

    def gc_chunk(self, chunk_id: int, move_row: Callable[[int, int], bool]) -> int:
        """Relocate live rows and recycle the chunk; returns bytes reclaimed."""
        capacity = self.chunk_size
        copied = self.relocate_rows(chunk_id, move_row)
        self.free_chunk(chunk_id)
        return capacity - copied

    def free_chunk(self, chunk_id: int) -> None:
        with self._lock:
            chunk = self.chunks.pop(chunk_id)
            self._write_table_entry(chunk_id, CHUNK_FREE, 0, 0)
            if chunk.prev is not None and chunk.prev in self.chunks:
                self.chunks[chunk.prev].next = chunk.next
            if chunk.next is not None and chunk.next in self.chunks:
                self.chunks[chunk.next].prev = chunk.prev
            if self._open.get(chunk.schema_id) == chunk_id:
                del self._open[chunk.schema_id]

    # -- recovery ----------------------------------------------------------
    def _scan(self) -> RecoveryScan:
        scan = RecoveryScan()
        entries = []
        self._states = []
        for cid in range(self.max_chunks):
            raw = self.region.read(TABLE_OFFSET + cid * TABLE_ENTRY.size, TABLE_ENTRY.size)
            state, schema_id, epoch = TABLE_ENTRY.unpack(raw)
            self._states.append(state)
            if state == CHUNK_IN_USE:
                entries.append((epoch, cid, schema_id))
        for epoch, cid, schema_id in sorted(entries):
            clog_base, dlog_base = self._chunk_bases(cid)
            chunk = Chunk(cid, schema_id, epoch, clog_base, self.config.clog_size, dlog_base, self.config.dlog_size)
            prev_id = self._open.get(schema_id)
            if prev_id is not None:
                chunk.prev = prev_id
                self.chunks[prev_id].next = cid
            self.chunks[cid] = chunk
            self._open[schema_id] = cid
            self._next_epoch = max(self._next_epoch, epoch + 1)
            schema = self.registry.get(schema_id)
            self._scan_clog(chunk, schema, scan)
            self._scan_dlog(chunk, schema, scan)
            self._scrub(chunk.clog_base + chunk.clog_cursor, chunk.clog_cap - chunk.clog_cursor)
            self._scrub(chunk.dlog_base + chunk.dlog_cursor, chunk.dlog_cap - chunk.dlog_cursor)
        return scan

    def _scrub(self, addr: int, n: int) -> None:
        """Zero whatever a torn append left past the recovered cursor."""
        if n <= 0:
            return
        if self.region.read(addr, n).count(0) != n:
            self.region.write_at(addr, bytes(n))
            self.region.flush_range(addr, n)
            self.region.fence()

    def _scan_clog(self, chunk: Chunk, schema: SchemaDef, scan: RecoveryScan) -> None:
        pos = 0
        while pos + 4 <= chunk.clog_cap:
            addr = chunk.clog_base + pos
            word, key_len = COMPLETE_HEADER.unpack(self.region.read(addr, 4))
            kv_size = word & KV_SIZE_MASK
            size = 4 + key_len + kv_size
            if word == 0 or key_len < 4 or kv_size < schema.fixed_region_size or pos + size > chunk.clog_cap:
                break
            key = HierKey.decode(self.region.read(addr + 4, key_len))
            if key.schema_id != schema.schema_id:
                break
            valid = not word & INVALID_BIT
            scan.complete.append(ScannedRow(addr, size, key=key, valid=valid, chunk_epoch=chunk.epoch))
            if valid:
                chunk.live_bytes += size
            pos += size
        chunk.clog_cursor = pos

    def _scan_dlog(self, chunk: Chunk, schema: SchemaDef, scan: RecoveryScan) -> None:
        pos = 0
        while pos + 4 <= chunk.dlog_cap:
            addr = chunk.dlog_base + pos
            meta_size, count = DELTA_PREFIX.unpack(self.region.read(addr, 4))
            if meta_size == 0 or count == 0 or meta_size != 12 + 2 * count or pos + meta_size > chunk.dlog_cap:
                break
            rest = self.region.read(addr + 4, meta_size - 4)
            ids = struct.unpack_from(f"<{count}H", rest)
            if any(b <= a for a, b in zip(ids, ids[1:])) or ids[-1] >= schema.field_count:
                break
            prev = ADDR.unpack_from(rest, meta_size - 12)[0]
            size = meta_size
            for fid in ids:
                f = schema.fields[fid]
                if f.is_fixed:
                    size += f.size
                else:
                    if pos + size + VAR_HEAD_SIZE > chunk.dlog_cap:
                        break
                    vsize = VAR_HEAD.unpack(self.region.read(addr + size, VAR_HEAD_SIZE))[1]
                    size += VAR_HEAD_SIZE + (vsize if vsize > INLINE_MAX else 0)
            if pos + size > chunk.dlog_cap:
                break
            scan.deltas.append(ScannedRow(addr, size, prev=prev, chunk_epoch=chunk.epoch))
            pos += size
        chunk.dlog_cursor = pos
