"""Schema-aware row cache hanging off the global index.

Cached rows live in fixed-size slots of per-schema page lists. The index
entry of a cached key carries a CACHE location, so a read finds the row with
the same single index probe it would spend on a log read; there is no
separate cache lookup structure to miss in.

Admission and eviction are driven by per-schema statistics: a moving-average
hit ratio, the row occupancy of the schema's pages and a retention window.
Maintenance work (admission, access-time refresh, repair, eviction) is queued
and executed by a single consumer, either a background thread or inline.
"""

from __future__ import annotations

import enum
import logging
import math
import random
import struct
import threading
import time
import zlib
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from focus.codec import ADDR, INLINE_MAX, VAR_HEAD
from focus.errors import ChecksumMismatch, FocusError
from focus.index import GlobalIndex, IndexEntry, Location
from focus.schema import VAR_HEAD_SIZE, HierKey, SchemaDef, SchemaRegistry

logger = logging.getLogger(__name__)

# [u32 checksum][f64 last_access][u64 plog_addr][u16 var_used]
ROW_META = struct.Struct("<IdQH")
PAGE_HEADER_SIZE = 20

DEFAULT_RW_TABLE = ((0.3, 2000.0), (0.7, 8000.0), (math.inf, 2000.0))


@dataclass
class CacheConfig:
    capacity_bytes: int = 500 << 20
    page_size: int = 16 << 10
    hit_threshold: float = 0.5
    page_usage_target: float = 0.8
    evict_trigger: float = 0.95
    rw_table: tuple = DEFAULT_RW_TABLE
    ema_alpha: float = 0.05
    task_queue_len: int = 1 << 16
    var_area_quota: int = 256
    mode: str = "thread"  # "thread", "inline" or "manual"
    seed: int = 0
    max_sweeps: int = 64

    @property
    def warmup_accesses(self) -> int:
        return math.ceil(1 / self.ema_alpha)


@dataclass
class SchemaStats:
    schema_id: int
    hit_ratio: float = 0.0
    accesses: int = 0
    fail_count: int = 0
    retention_ms: Optional[float] = None
    rows: int = 0
    slots: int = 0
    pages: list = field(default_factory=list)

    @property
    def row_occupancy(self) -> float:
        return self.rows / self.slots if self.slots else 0.0

    def record(self, hit: bool, alpha: float) -> None:
        self.accesses += 1
        x = 1.0 if hit else 0.0
        if self.accesses * alpha <= 1.0:
            # running mean until the average has seen a full window
            self.hit_ratio += (x - self.hit_ratio) / self.accesses
        else:
            self.hit_ratio += alpha * (x - self.hit_ratio)


def retention_window(hit_ratio: float, table: Sequence[tuple[float, float]] = DEFAULT_RW_TABLE) -> float:
    for upper, window in table:
        if hit_ratio < upper:
            return window
    return table[-1][1]


def lifetime(hit_ratio: float, row_occupancy: float, retention_ms: float, fail_count: int) -> float:
    return 2.0 ** -fail_count * hit_ratio * (1.0 - row_occupancy) * retention_ms


def should_admit(stats: SchemaStats, rng: random.Random, hit_threshold: float = 0.5,
                 warming: bool = False) -> bool:
    """Admission test: certain above the threshold, else with probability H / hit_threshold."""
    if not 0 < hit_threshold <= 1:
        raise ValueError("hit_threshold must lie in (0, 1]")
    if warming or stats.hit_ratio > hit_threshold:
        return True
    return rng.random() < stats.hit_ratio / hit_threshold


class TaskKind(enum.Enum):
    REFRESH = "refresh_access"
    ADMIT = "admit"
    WRITEBACK = "writeback"
    EVICT = "evict"


@dataclass
class Task:
    kind: TaskKind
    entry: Optional[IndexEntry] = None
    values: Optional[list] = None
    ts: float = 0.0


class TaskQueue:
    """Bounded ring buffer; many producers, one consumer. ``offer`` never waits for space."""

    def __init__(self, capacity: int) -> None:
        self.capacity = capacity
        self._buf: list = [None] * capacity
        self._head = 0
        self._tail = 0
        self._lock = threading.Lock()

    def offer(self, item) -> bool:
        with self._lock:
            if self._tail - self._head >= self.capacity:
                return False
            self._buf[self._tail % self.capacity] = item
            self._tail += 1
            return True

    def poll(self):
        if self._head == self._tail:
            return None
        i = self._head % self.capacity
        item = self._buf[i]
        self._buf[i] = None
        self._head += 1
        return item

    def __len__(self) -> int:
        return self._tail - self._head


class Page:
    __slots__ = ("page_id", "schema_id", "schema_version", "row_count", "prev", "next",
                 "bitmap", "nslots", "slot_size", "data", "keys")

    def __init__(self, page_id: int, page_size: int) -> None:
        self.page_id = page_id
        self.data = bytearray(page_size)
        self.schema_id = 0
        self.schema_version = 0
        self.row_count = 0
        self.prev: Optional[int] = None
        self.next: Optional[int] = None
        self.bitmap = 0
        self.nslots = 0
        self.slot_size = 0
        self.keys: list = []

    def format(self, schema: SchemaDef, slot_size: int, page_size: int) -> None:
        self.schema_id = schema.schema_id
        self.schema_version = schema.version
        self.slot_size = slot_size
        usable = page_size - PAGE_HEADER_SIZE
        # one bitmap bit per slot comes out of the same space
        self.nslots = (usable * 8) // (slot_size * 8 + 1)
        self.bitmap = 0
        self.row_count = 0
        self.keys = [None] * self.nslots

    @property
    def full(self) -> bool:
        return self.row_count >= self.nslots

    def first_free(self) -> int:
        free = ~self.bitmap & ((1 << self.nslots) - 1)
        return (free & -free).bit_length() - 1

    def offset(self, slot: int) -> int:
        return PAGE_HEADER_SIZE + slot * self.slot_size


@dataclass
class CacheRow:
    key: HierKey
    values: list
    plog_addr: int
    last_access: float
    checksum: int
    page: int
    slot: int


@dataclass
class CacheCounters:
    admitted: int = 0
    rejected: int = 0
    pool_exhausted: int = 0
    evicted: int = 0
    dropped_refresh: int = 0
    queue_full_admits: int = 0
    checksum_failures: int = 0
    repaired: int = 0
    detached: int = 0
    probes: int = 0  # separate cache-structure probes; the index is the only lookup path


class SeaCache:
    def __init__(
        self,
        index: GlobalIndex,
        registry: SchemaRegistry,
        config: Optional[CacheConfig] = None,
        *,
        clock: Optional[Callable[[], float]] = None,
        loader: Optional[Callable[[int], list]] = None,
    ) -> None:
        self.index = index
        self.registry = registry
        self.config = config or CacheConfig()
        self.clock = clock or (lambda: time.monotonic() * 1000.0)
        self.loader = loader
        self.rng = random.Random(self.config.seed)
        self.pool_pages = max(1, self.config.capacity_bytes // self.config.page_size)
        self.pages: dict[int, Page] = {}
        self._free_pages: list[int] = []
        self._next_page = 0
        self.schema_stats: dict[int, SchemaStats] = {}
        self.counters = CacheCounters()
        self._lock = threading.RLock()
        self._stats_lock = threading.Lock()
        self._worker_lock = threading.Lock()
        self.queue = TaskQueue(self.config.task_queue_len)
        self._wake = threading.Event()
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None
        self._used_fraction = 0.0
        self.saturated = False
        if self.config.mode == "thread":
            self.start()

    # -- statistics ----------------------------------------------------------
    def stats_for(self, schema_id: int) -> SchemaStats:
        st = self.schema_stats.get(schema_id)
        if st is None:
            with self._stats_lock:
                st = self.schema_stats.setdefault(schema_id, SchemaStats(schema_id))
        return st

    def record_access(self, schema_id: int, hit: bool) -> None:
        st = self.stats_for(schema_id)
        with self._stats_lock:
            st.record(hit, self.config.ema_alpha)

    def retention_ms(self, st: SchemaStats) -> float:
        if st.retention_ms is not None:
            return st.retention_ms
        return retention_window(st.hit_ratio, self.config.rw_table)

    def lifetime(self, st: SchemaStats) -> float:
        return lifetime(st.hit_ratio, st.row_occupancy, self.retention_ms(st), st.fail_count)

    def warming(self, st: SchemaStats) -> bool:
        # LRU-like admission until the cache first fills up or the average has a full window
        return not self.saturated or st.accesses < self.config.warmup_accesses

    def should_admit(self, st: SchemaStats) -> bool:
        return should_admit(st, self.rng, self.config.hit_threshold, self.warming(st))

    def usage(self) -> float:
        return self._used_fraction / self.pool_pages

    def hit_ratio(self, schema_id: int) -> float:
        return self.stats_for(schema_id).hit_ratio

    # -- row encoding --------------------------------------------------------
    def _slot_size(self, schema: SchemaDef) -> int:
        quota = self.config.var_area_quota if schema.variable_ids else 0
        return ROW_META.size + schema.fixed_region_size + quota

    def _encode_payload(self, schema: SchemaDef, values: Sequence[bytes]) -> Optional[bytes]:
        fixed = []
        var = []
        var_pos = 0
        for f, v in zip(schema.fields, values):
            if f.is_fixed:
                fixed.append(v)
            elif len(v) <= INLINE_MAX:
                fixed.append(VAR_HEAD.pack(f.type_code, len(v), v.ljust(INLINE_MAX, b"\0")))
            else:
                fixed.append(VAR_HEAD.pack(f.type_code, len(v), ADDR.pack(var_pos)))
                var.append(v)
                var_pos += len(v)
        if var_pos > (self.config.var_area_quota if schema.variable_ids else 0):
            return None
        return b"".join(fixed) + b"".join(var)

    def _decode_payload(self, schema: SchemaDef, payload: bytes) -> list:
        out = []
        var_base = schema.fixed_region_size
        for fid, f in enumerate(schema.fields):
            pos = schema.fixed_offsets[fid]
            if f.is_fixed:
                out.append(bytes(payload[pos:pos + f.size]))
                continue
            _t, size, raw = VAR_HEAD.unpack_from(payload, pos)
            if size <= INLINE_MAX:
                out.append(raw[:size])
            else:
                off = var_base + ADDR.unpack(raw)[0]
                out.append(bytes(payload[off:off + size]))
        return out

    def _write_row(self, page: Page, slot: int, payload: bytes, plog_addr: int, ts: float) -> None:
        off = page.offset(slot)
        schema_fixed = self.registry.get(page.schema_id).fixed_region_size
        var_used = len(payload) - schema_fixed
        page.data[off:off + ROW_META.size] = ROW_META.pack(zlib.crc32(payload), ts, plog_addr, var_used)
        start = off + ROW_META.size
        page.data[start:start + len(payload)] = payload

    def _row_meta(self, page: Page, slot: int) -> tuple[int, float, int, int]:
        return ROW_META.unpack_from(page.data, page.offset(slot))

    def _payload(self, page: Page, slot: int, schema: SchemaDef) -> bytes:
        var_used = self._row_meta(page, slot)[3]
        start = page.offset(slot) + ROW_META.size
        return bytes(page.data[start:start + schema.fixed_region_size + var_used])

    def _set_meta(self, page: Page, slot: int, *, ts: Optional[float] = None, plog: Optional[int] = None,
                  crc: Optional[int] = None) -> None:
        c, t, p, v = self._row_meta(page, slot)
        ROW_META.pack_into(page.data, page.offset(slot), c if crc is None else crc,
                           t if ts is None else ts, p if plog is None else plog, v)

    # -- page management -----------------------------------------------------
    def _take_page(self, schema: SchemaDef) -> Optional[Page]:
        if self._free_pages:
            page = self.pages[self._free_pages.pop()]
        elif self._next_page < self.pool_pages:
            page = Page(self._next_page, self.config.page_size)
            self.pages[page.page_id] = page
            self._next_page += 1
        else:
            return None
        page.format(schema, self._slot_size(schema), self.config.page_size)
        st = self.stats_for(schema.schema_id)
        page.prev = st.pages[-1] if st.pages else None
        page.next = None
        if st.pages:
            self.pages[st.pages[-1]].next = page.page_id
        st.pages.append(page.page_id)
        st.slots += page.nslots
        return page

    def _release_page(self, page: Page) -> None:
        st = self.stats_for(page.schema_id)
        st.pages.remove(page.page_id)
        st.slots -= page.nslots
        if page.prev is not None:
            self.pages[page.prev].next = page.next
        if page.next is not None:
            self.pages[page.next].prev = page.prev
        page.prev = page.next = None
        self._free_pages.append(page.page_id)

    def _claim_slot(self, schema: SchemaDef) -> Optional[tuple[Page, int]]:
        st = self.stats_for(schema.schema_id)
        page = None
        for pid in st.pages:
            p = self.pages[pid]
            if not p.full:
                page = p
                break
        if page is None:
            page = self._take_page(schema)
            if page is None:
                return None
        slot = page.first_free()
        page.bitmap |= 1 << slot
        page.row_count += 1
        st.rows += 1
        self._used_fraction += 1.0 / page.nslots
        return page, slot

    def _free_slot(self, page: Page, slot: int) -> None:
        if not page.bitmap >> slot & 1:
            return
        page.bitmap &= ~(1 << slot)
        page.row_count -= 1
        page.keys[slot] = None
        self._used_fraction -= 1.0 / page.nslots
        self.stats_for(page.schema_id).rows -= 1
        if page.row_count == 0:
            self._release_page(page)

    # -- foreground reads ----------------------------------------------------
    def _locate(self, entry: IndexEntry) -> Optional[tuple[Page, int]]:
        page = self.pages.get(entry.loc.page)
        slot = entry.loc.slot
        if page is None or slot >= page.nslots or page.keys[slot] != entry.key:
            return None
        return page, slot

    def read(self, entry: IndexEntry) -> Optional[list]:
        """Values of a cached row, or None if the slot no longer belongs to the entry's key."""
        schema = self.registry.get(entry.key.schema_id)
        with self._lock:
            hit = self._locate(entry)
            if hit is None:
                return None
            page, slot = hit
            crc = self._row_meta(page, slot)[0]
            payload = self._payload(page, slot, schema)
        if zlib.crc32(payload) != crc:
            self.counters.checksum_failures += 1
            raise ChecksumMismatch(entry.key)
        return self._decode_payload(schema, payload)

    def lookup(self, key: HierKey) -> Optional[CacheRow]:
        entry = self.index.lookup(key)
        if entry is None or not entry.loc.is_cache:
            return None
        schema = self.registry.get(key.schema_id)
        with self._lock:
            hit = self._locate(entry)
            if hit is None:
                return None
            page, slot = hit
            crc, ts, plog, _v = self._row_meta(page, slot)
            payload = self._payload(page, slot, schema)
        if zlib.crc32(payload) != crc:
            self.counters.checksum_failures += 1
            raise ChecksumMismatch(key)
        self.request_refresh(entry)
        return CacheRow(key, self._decode_payload(schema, payload), plog, ts, crc, page.page_id, slot)

    def tail_of(self, entry: IndexEntry) -> Optional[int]:
        with self._lock:
            hit = self._locate(entry)
            if hit is None:
                return None
            return self._row_meta(*hit)[2]

    # -- foreground publication ---------------------------------------------
    def swing(self, entry: IndexEntry, expected_tail: int, new_tail: int, new_head: int, chain_len: int,
              *, absorb=None, replace=None) -> bool:
        """Publish a new chain tail for a cached key, folding the update into the cached row.

        Variable-length partial updates, rows that no longer fit their slot and
        rows failing their checksum are detached instead: the index goes back to
        a LOG location and the slot is freed.
        """
        key = entry.key
        schema = self.registry.get(key.schema_id)
        with self._lock:
            if self.index.peek(key) is not entry:
                return False
            hit = self._locate(entry)
            if hit is None:
                return False
            page, slot = hit
            crc, ts, plog, _v = self._row_meta(page, slot)
            if plog != expected_tail:
                return False
            payload: Optional[bytes] = None
            detach = False
            if replace is not None:
                payload = self._encode_payload(schema, replace)
                detach = payload is None
            elif absorb:
                if any(not schema.fields[fid].is_fixed for fid in absorb):
                    detach = True
                else:
                    cur = bytearray(self._payload(page, slot, schema))
                    if zlib.crc32(cur) != crc:
                        detach = True
                    else:
                        for fid, v in absorb.items():
                            off = schema.fixed_offsets[fid]
                            cur[off:off + len(v)] = v
                        payload = bytes(cur)
            if detach:
                new = IndexEntry(key, Location.log(new_tail), chain_len, new_head)
                if not self.index.cas_entry(entry, new):
                    return False
                self._free_slot(page, slot)
                self.counters.detached += 1
                return True
            if not self.index.cas_entry(entry, IndexEntry(key, entry.loc, chain_len, new_head)):
                return False
            if payload is not None:
                self._write_row(page, slot, payload, new_tail, ts)
            else:
                self._set_meta(page, slot, plog=new_tail)
            return True

    def remove(self, entry: IndexEntry) -> bool:
        with self._lock:
            if not self.index.remove_entry(entry):
                return False
            hit = self._locate(entry)
            if hit is not None:
                self._free_slot(*hit)
            return True

    # -- task queue ----------------------------------------------------------
    def enqueue_task(self, task: Task) -> bool:
        if self.config.mode == "inline":
            with self._worker_lock:
                self._process(task)
            return True
        if self.queue.offer(task):
            if self._thread is not None:
                self._wake.set()
            return True
        if task.kind is TaskKind.REFRESH:
            self.counters.dropped_refresh += 1
        elif task.kind is TaskKind.ADMIT:
            self.counters.queue_full_admits += 1
            self.counters.rejected += 1
        return False

    def request_refresh(self, entry: IndexEntry) -> None:
        self.enqueue_task(Task(TaskKind.REFRESH, entry, ts=self.clock()))

    def request_admit(self, entry: IndexEntry, values: Optional[list]) -> None:
        # the admission draw happens at miss time, against the statistics of that moment
        if not self.should_admit(self.stats_for(entry.key.schema_id)):
            self.counters.rejected += 1
            return
        self.enqueue_task(Task(TaskKind.ADMIT, entry, values, ts=self.clock()))

    def request_writeback(self, entry: IndexEntry) -> None:
        self.enqueue_task(Task(TaskKind.WRITEBACK, entry, ts=self.clock()))

    def request_eviction(self) -> None:
        self.enqueue_task(Task(TaskKind.EVICT, ts=self.clock()))

    def process_pending(self, limit: Optional[int] = None) -> int:
        done = 0
        with self._worker_lock:
            while limit is None or done < limit:
                task = self.queue.poll()
                if task is None:
                    break
                self._process(task)
                done += 1
        return done

    def _process(self, task: Task) -> None:
        try:
            if task.kind is TaskKind.REFRESH:
                self._refresh(task.entry, task.ts)
            elif task.kind is TaskKind.ADMIT:
                self.admit(task.entry, task.values, task.ts, check=False)
            elif task.kind is TaskKind.WRITEBACK:
                self._writeback(task.entry)
            elif task.kind is TaskKind.EVICT:
                self.evict_pass()
        except FocusError as exc:
            # e.g. the row's chunk was reclaimed between the miss and the task
            logger.debug("cache task %s skipped: %r", task.kind, exc)
        except Exception:  # the worker must survive a bad task
            logger.exception("cache task %s failed", task.kind)

    def start(self) -> None:
        if self._thread is not None:
            return
        self._stop.clear()

        def loop() -> None:
            while not self._stop.is_set():
                if not self.process_pending(256):
                    self._wake.wait(0.01)
                    self._wake.clear()

        self._thread = threading.Thread(target=loop, name="seacache-worker", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        if self._thread is None:
            return
        self._stop.set()
        self._wake.set()
        self._thread.join()
        self._thread = None
        self.process_pending()

    # -- worker-side operations ----------------------------------------------
    def _refresh(self, entry: IndexEntry, ts: float) -> None:
        with self._lock:
            hit = self._locate(entry)
            if hit is not None and ts > self._row_meta(*hit)[1]:
                self._set_meta(*hit, ts=ts)

    def admit(self, entry: IndexEntry, values: Optional[list] = None, ts: Optional[float] = None,
              *, check: bool = True):
        """Try to cache the full row behind ``entry``; returns (page, slot) or None if rejected."""
        if entry.loc.is_cache:
            return None
        key = entry.key
        schema = self.registry.get(key.schema_id)
        if check and not self.should_admit(self.stats_for(schema.schema_id)):
            self.counters.rejected += 1
            return None
        if self.index.peek(key) is not entry:
            self.counters.rejected += 1
            return None
        tail = entry.loc.log_addr
        if values is None:
            if self.loader is None:
                return None
            values = self.loader(tail)
        payload = self._encode_payload(schema, values)
        if payload is None:
            self.counters.rejected += 1
            return None
        ts = self.clock() if ts is None else ts
        with self._lock:
            claimed = self._claim_slot(schema)
            if claimed is None:
                self.counters.pool_exhausted += 1
                self.counters.rejected += 1
                over = True
            else:
                over = False
                page, slot = claimed
                page.keys[slot] = key
                self._write_row(page, slot, payload, tail, ts)
                new = IndexEntry(key, Location.cache(page.page_id, slot), entry.chain_len, entry.head)
                if not self.index.cas_entry(entry, new):
                    self._free_slot(page, slot)
                    self.counters.rejected += 1
                    return None
                self.counters.admitted += 1
        if over or self.usage() >= self.config.evict_trigger:
            self.saturated = True
            self.evict_pass()
        return None if over else (page.page_id, slot)

    def _writeback(self, entry: IndexEntry) -> None:
        """Rebuild a cached row from its log chain (repairs checksum failures)."""
        schema = self.registry.get(entry.key.schema_id)
        with self._lock:
            if self.index.peek(entry.key) is not entry:
                return
            hit = self._locate(entry)
            if hit is None:
                return
            page, slot = hit
            _c, ts, plog, _v = self._row_meta(page, slot)
            payload = None
            if self.loader is not None:
                payload = self._encode_payload(schema, self.loader(plog))
            if payload is None:
                new = IndexEntry(entry.key, Location.log(plog), entry.chain_len, entry.head)
                if self.index.cas_entry(entry, new):
                    self._free_slot(page, slot)
                    self.counters.detached += 1
                return
            self._write_row(page, slot, payload, plog, ts)
            self.counters.repaired += 1

    def _evict_row(self, page: Page, slot: int) -> bool:
        key = page.keys[slot]
        plog = self._row_meta(page, slot)[2]
        entry = self.index.peek(key)
        if entry is not None and entry.loc == Location.cache(page.page_id, slot):
            new = IndexEntry(key, Location.log(plog), entry.chain_len, entry.head)
            if not self.index.cas_entry(entry, new):
                return False
        self._free_slot(page, slot)
        self.counters.evicted += 1
        return True

    def evict_pass(self, target: Optional[float] = None) -> int:
        """Evict rows idle longer than their schema's lifetime until usage <= target.

        Schemas are visited from the lowest hit ratio up, and within a schema the
        longest-idle rows go first. A schema whose sweep evicts nothing gets its
        failure count bumped, halving its lifetime for the next sweep.
        """
        target = self.config.page_usage_target if target is None else target
        evicted = 0
        with self._lock:
            for _sweep in range(self.config.max_sweeps):
                if self.usage() <= target:
                    break
                now = self.clock()
                order = sorted((st for st in self.schema_stats.values() if st.rows),
                               key=lambda s: s.hit_ratio)
                done = False
                for st in order:
                    limit = self.lifetime(st)
                    stale = []
                    for pid in list(st.pages):
                        page = self.pages[pid]
                        bits = page.bitmap
                        while bits:
                            low = bits & -bits
                            slot = low.bit_length() - 1
                            bits ^= low
                            idle = now - self._row_meta(page, slot)[1]
                            if idle > limit:
                                stale.append((idle, pid, slot))
                    stale.sort(reverse=True)
                    n = 0
                    for _idle, pid, slot in stale:
                        if self._evict_row(self.pages[pid], slot):
                            n += 1
                        if self.usage() <= target:
                            done = True
                            break
                    if n:
                        st.fail_count = 0
                        evicted += n
                    else:
                        st.fail_count += 1
                    if done:
                        break
                if done:
                    break
        return evicted

    # -- introspection -------------------------------------------------------
    def check_pages(self) -> None:
        """Assert the page-header invariants (used by tests)."""
        with self._lock:
            for st in self.schema_stats.values():
                rows = 0
                for pid in st.pages:
                    page = self.pages[pid]
                    assert page.row_count == bin(page.bitmap).count("1")
                    assert page.schema_id == st.schema_id
                    rows += page.row_count
                assert rows == st.rows

    def cached_rows(self) -> int:
        return sum(st.rows for st in self.schema_stats.values())

    def close(self) -> None:
        self.stop()
