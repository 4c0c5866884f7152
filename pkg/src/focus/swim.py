"""Sequential write ahead of in-place merge.

Updates never overwrite a live row on the critical path. A partial update is
appended as a delta row that points at the previous chain tail and is then
published with a compare-and-swap on the index entry. Reads walk the chain
from tail to head. Consecutive partial updates are bounded by a restore
point (a full rewrite), and a merge step later folds fixed-length delta
fields back into the head row with one flush per touched cacheline.
"""

from __future__ import annotations

import enum
import logging
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Mapping, Optional, Sequence

from focus.codec import (
    COMPLETE_HEADER,
    INLINE_MAX,
    VAR_HEAD,
    CompleteRowImage,
    DeltaRowImage,
    decode_complete_unchecked,
    decode_delta,
    encode_complete,
    encode_delta,
    values_list,
)
from focus.errors import (
    ChecksumMismatch,
    DLogFull,
    KeyAbsent,
    UnsortedInput,
)
from focus.index import GlobalIndex, IndexEntry, Location
from focus.pmem import CACHELINE, PmemRegion
from focus.plog import PersistentLog, RecoveryScan
from focus.schema import VAR_HEAD_SIZE, HierKey, SchemaDef, SchemaRegistry
from focus.sync import SharedExclusiveLock

if TYPE_CHECKING:
    from focus.seacache import SeaCache

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MergeItem:
    addr: int
    size: int

    def __post_init__(self) -> None:
        if self.size < 1:
            raise ValueError("merge item size must be >= 1")


def _align(addr: int) -> int:
    return addr - addr % CACHELINE


def cacheline_flush(region: PmemRegion, mlist: Sequence[MergeItem]) -> int:
    """Flush each cacheline touched by ``mlist`` once, then fence.

    ``mlist`` must be sorted by address. A single ``flush_point`` trails the
    walk; it is flushed only when the walk moves past it. Returns the number
    of flushes issued.
    """
    if not mlist:
        return 0
    if any(b.addr < a.addr for a, b in zip(mlist, mlist[1:])):
        raise UnsortedInput("merge list must be sorted by address")
    flushes = 0
    flush_point = _align(mlist[0].addr)
    for m in mlist:
        tmp = _align(m.addr)
        end = m.addr + m.size
        while tmp < end:
            if tmp > flush_point:
                region.flush(flush_point)
                flushes += 1
                flush_point = tmp
            tmp += CACHELINE
    region.flush(flush_point)
    region.fence()
    return flushes + 1


def naive_flush(region: PmemRegion, mlist: Sequence[MergeItem]) -> int:
    """Per-item flushing of every line an item touches, one fence at the end."""
    flushes = 0
    for m in mlist:
        line = _align(m.addr)
        while line < m.addr + m.size:
            region.flush(line)
            flushes += 1
            line += CACHELINE
    region.fence()
    return flushes


class MergeOutcome(enum.Enum):
    MERGED = "merged"
    DEFERRED = "deferred"
    REWRITTEN = "rewritten"
    NOOP = "noop"


@dataclass
class ChainView:
    tail_addr: int
    rows: list  # tail first; last element is the complete row
    head_addr: int
    addrs: list = field(default_factory=list)


@dataclass
class EngineStats:
    full_puts: int = 0
    deltas: int = 0
    rewrites: int = 0
    cas_retries: int = 0
    merged: int = 0
    deferred: int = 0
    merge_rewrites: int = 0
    merge_flushes: int = 0
    gc_runs: int = 0
    gc_moved_rows: int = 0
    cache_hits: int = 0
    cache_misses: int = 0


class _ReadTrace(threading.local):
    rows_visited = 0


class SwimEngine:
    def __init__(
        self,
        region: PmemRegion,
        registry: SchemaRegistry,
        plog: PersistentLog,
        index: Optional[GlobalIndex] = None,
        *,
        restore_threshold: int = 5,
        merge_queue_depth: int = 4096,
        merge_batch: int = 64,
    ) -> None:
        self.region = region
        self.registry = registry
        self.plog = plog
        self.index = index if index is not None else GlobalIndex()
        self.cache: Optional["SeaCache"] = None
        self.restore_threshold = restore_threshold
        self.merge_queue_depth = merge_queue_depth
        self.merge_batch = merge_batch
        self.stats = EngineStats()
        self.trace = _ReadTrace()
        self.guard = SharedExclusiveLock()
        self._maint = threading.Lock()
        self._merge_queue: deque[HierKey] = deque()
        self._merge_pending: set[HierKey] = set()
        self._merge_lock = threading.Lock()
        self._merge_latches: set[HierKey] = set()
        self._merge_thread: Optional[threading.Thread] = None
        self._stop = threading.Event()

    # -- helpers -------------------------------------------------------------
    def _schema(self, key: HierKey) -> SchemaDef:
        return self.registry.get(key.schema_id)

    def _tail(self, entry: IndexEntry) -> Optional[int]:
        if entry.loc.is_cache:
            return self.cache.tail_of(entry) if self.cache is not None else None
        return entry.loc.log_addr

    def _publish(self, entry: IndexEntry, expected_tail: int, new_tail: int, new_head: int,
                 chain_len: int, *, absorb: Optional[Mapping[int, bytes]] = None,
                 replace: Optional[list] = None) -> bool:
        """Single publication point: swing ``entry`` from ``expected_tail`` to ``new_tail``."""
        if entry.loc.is_cache:
            return self.cache.swing(entry, expected_tail, new_tail, new_head, chain_len,
                                    absorb=absorb, replace=replace)
        new = IndexEntry(entry.key, Location.log(new_tail), chain_len, new_head)
        return self.index.cas_entry(entry, new)

    def _append_complete(self, schema: SchemaDef, image: CompleteRowImage) -> int:
        return self.plog.append_complete(image, schema)

    def collect_full(self, tail: int, schema: Optional[SchemaDef] = None) -> list[bytes]:
        """Latest value of every field, walking from ``tail`` to the head."""
        schema = schema or self.plog.schema_of(tail)
        out: list[Optional[bytes]] = [None] * schema.field_count
        missing = schema.field_count
        addr = tail
        rows = 0
        while True:
            image = self.plog.read_row(addr)
            rows += 1
            if isinstance(image, CompleteRowImage):
                for fid, v in enumerate(decode_complete_unchecked(image, schema)):
                    if out[fid] is None:
                        out[fid] = v
                break
            for fid, v in decode_delta(image, schema).items():
                if out[fid] is None:
                    out[fid] = v
                    missing -= 1
            if not missing:
                break
            addr = image.chain_pointer
        self.trace.rows_visited = rows
        return out  # type: ignore[return-value]

    def _collect_fields(self, tail: int, schema: SchemaDef, fids: Iterable[int]) -> dict[int, bytes]:
        remaining = set(fids)
        out: dict[int, bytes] = {}
        addr: Optional[int] = tail
        rows = 0
        while remaining and addr is not None:
            found, addr = self.plog.read_fields(addr, schema, remaining)
            rows += 1
            out.update(found)
            remaining.difference_update(found)
        self.trace.rows_visited = rows
        return out

    def chain(self, key: HierKey) -> ChainView:
        """Decoded rows of a key's chain, tail first."""
        entry = self.index.lookup(key)
        if entry is None:
            raise KeyAbsent(key)
        tail = self._tail(entry)
        rows, addrs = [], []
        addr = tail
        while True:
            image = self.plog.read_row(addr)
            rows.append(image)
            addrs.append(addr)
            if isinstance(image, CompleteRowImage):
                return ChainView(tail, rows, addr, addrs)
            addr = image.chain_pointer

    # -- foreground operations -------------------------------------------------
    def put_full(self, key: HierKey, values) -> None:
        schema = self._schema(key)
        image = encode_complete(schema, key, values)
        vals = None
        with self.guard.shared():
            addr = self._append_complete(schema, image)
            while True:
                entry = self.index.lookup(key)
                if entry is None:
                    if self.index.insert(key, Location.log(addr), chain_len=0, head=addr):
                        break
                    continue
                tail = self._tail(entry)
                if tail is None:
                    continue
                if vals is None and entry.loc.is_cache:
                    vals = values_list(schema, values)
                if self._publish(entry, tail, addr, addr, 0, replace=vals):
                    self.plog.mark_invalid(entry.head)
                    break
                self.stats.cas_retries += 1
        self.stats.full_puts += 1

    def update_partial(self, key: HierKey, field_values: Mapping[int, bytes]) -> None:
        schema = self._schema(key)
        fvals = {(schema.field_id(k) if isinstance(k, str) else k): bytes(v) for k, v in field_values.items()}
        d_addr: Optional[int] = None
        d_meta = 0
        chain_len = 0
        with self.guard.shared():
            while True:
                entry = self.index.lookup(key)
                if entry is None:
                    raise KeyAbsent(key)
                tail = self._tail(entry)
                if tail is None:
                    continue
                if entry.chain_len + 1 > self.restore_threshold:
                    if self._rewrite(entry, tail, schema, fvals):
                        return
                    self.stats.cas_retries += 1
                    continue
                if d_addr is None or self.plog.chunk_of(d_addr) is not self.plog.chunk_of(tail):
                    image = encode_delta(schema, fvals, prev=tail)
                    try:
                        d_addr = self.plog.append_delta(image, schema)
                    except DLogFull:
                        # the owning chunk is out of delta space: fold the update into a rewrite
                        if self._rewrite(entry, tail, schema, fvals):
                            return
                        self.stats.cas_retries += 1
                        d_addr = None
                        continue
                    d_meta = image.meta_size
                else:
                    self.plog.set_chain_pointer(d_addr, d_meta, tail)
                chain_len = entry.chain_len + 1
                if self._publish(entry, tail, d_addr, entry.head, chain_len, absorb=fvals):
                    break
                self.stats.cas_retries += 1
        self.stats.deltas += 1
        if chain_len >= 2:
            self._enqueue_merge(key)

    def _rewrite(self, entry: IndexEntry, tail: int, schema: SchemaDef,
                 overrides: Mapping[int, bytes]) -> bool:
        """Reconstruct the full row, apply ``overrides`` and append it as a new head."""
        values = self.collect_full(tail, schema)
        for fid, v in overrides.items():
            values[fid] = v
        image = encode_complete(schema, entry.key, values)
        addr = self._append_complete(schema, image)
        if self._publish(entry, tail, addr, addr, 0, replace=values):
            self.plog.mark_invalid(entry.head)
            self.stats.rewrites += 1
            return True
        self.plog.mark_invalid(addr)
        return False

    def restore_rewrite(self, key: HierKey) -> None:
        schema = self._schema(key)
        with self.guard.shared():
            while True:
                entry = self.index.lookup(key)
                if entry is None:
                    raise KeyAbsent(key)
                tail = self._tail(entry)
                if tail is not None and self._rewrite(entry, tail, schema, {}):
                    return
                self.stats.cas_retries += 1

    def _read_cached(self, entry: IndexEntry, schema: SchemaDef) -> Optional[list]:
        try:
            vals = self.cache.read(entry)
        except ChecksumMismatch:
            logger.warning("checksum mismatch on cached row %r; serving from log", entry.key)
            self.cache.request_writeback(entry)
            tail = self.cache.tail_of(entry)
            if tail is None:
                return None
            return self.collect_full(tail, schema)
        if vals is not None:
            self.trace.rows_visited = 0
            self.stats.cache_hits += 1
            self.cache.record_access(schema.schema_id, True)
            self.cache.request_refresh(entry)
        return vals

    def read_full(self, key: HierKey) -> list[bytes]:
        schema = self._schema(key)
        with self.guard.shared():
            while True:
                entry = self.index.lookup(key)
                if entry is None:
                    raise KeyAbsent(key)
                if entry.loc.is_cache:
                    vals = self._read_cached(entry, schema)
                    if vals is None:
                        continue
                    return vals
                vals = self.collect_full(entry.loc.log_addr, schema)
                self._after_miss(entry, schema, vals)
                return vals

    def read_partial(self, key: HierKey, field_ids: Iterable[int]) -> dict[int, bytes]:
        schema = self._schema(key)
        fids = set(field_ids)
        if not fids:
            raise ValueError("read_partial needs at least one field")
        with self.guard.shared():
            while True:
                entry = self.index.lookup(key)
                if entry is None:
                    raise KeyAbsent(key)
                if entry.loc.is_cache:
                    vals = self._read_cached(entry, schema)
                    if vals is None:
                        continue
                    return {fid: vals[fid] for fid in fids}
                out = self._collect_fields(entry.loc.log_addr, schema, fids)
                self._after_miss(entry, schema, None)
                return out

    def _after_miss(self, entry: IndexEntry, schema: SchemaDef, values: Optional[list]) -> None:
        if self.cache is None:
            return
        self.stats.cache_misses += 1
        self.cache.record_access(schema.schema_id, False)
        self.cache.request_admit(entry, values)

    def delete(self, key: HierKey) -> bool:
        with self.guard.shared():
            while True:
                entry = self.index.lookup(key)
                if entry is None:
                    return False
                if entry.loc.is_cache:
                    ok = self.cache.remove(entry)
                else:
                    ok = self.index.remove_entry(entry)
                if ok:
                    self.plog.mark_invalid(entry.head)
                    return True
                self.stats.cas_retries += 1

    # -- merge -----------------------------------------------------------------
    def _enqueue_merge(self, key: HierKey) -> None:
        with self._merge_lock:
            if key in self._merge_pending or len(self._merge_queue) >= self.merge_queue_depth:
                return
            self._merge_pending.add(key)
            self._merge_queue.append(key)

    def merge_chain(self, key: HierKey) -> MergeOutcome:
        with self._merge_lock:
            if key in self._merge_latches:
                return MergeOutcome.DEFERRED
            self._merge_latches.add(key)
        try:
            with self._maint, self.guard.shared():
                outcome = self._merge_locked(key)
        finally:
            with self._merge_lock:
                self._merge_latches.discard(key)
        if outcome is MergeOutcome.MERGED:
            self.stats.merged += 1
        elif outcome is MergeOutcome.DEFERRED:
            self.stats.deferred += 1
        elif outcome is MergeOutcome.REWRITTEN:
            self.stats.merge_rewrites += 1
        return outcome

    def _merge_locked(self, key: HierKey) -> MergeOutcome:
        entry = self.index.lookup(key)
        if entry is None:
            raise KeyAbsent(key)
        if entry.chain_len == 0:
            return MergeOutcome.NOOP
        schema = self._schema(key)
        tail = self._tail(entry)
        if tail is None:
            return MergeOutcome.DEFERRED
        merged: dict[int, bytes] = {}
        addr = tail
        while not self.plog.is_complete(addr):
            image = self.plog.read_row(addr)
            for fid, v in decode_delta(image, schema).items():
                merged.setdefault(fid, v)
            addr = image.chain_pointer
        head = addr
        key_len = COMPLETE_HEADER.unpack(self.region.read(head, 4))[1]
        fixed_start = head + 4 + key_len
        writes: list[tuple[MergeItem, bytes]] = []
        for fid, v in merged.items():
            f = schema.fields[fid]
            pos = fixed_start + schema.fixed_offsets[fid]
            if f.is_fixed:
                writes.append((MergeItem(pos, f.size), v))
                continue
            # a variable field merges in place only while both old and new content fit inline
            cur_size = VAR_HEAD.unpack(self.region.read(pos, VAR_HEAD_SIZE))[1]
            if len(v) > INLINE_MAX or cur_size > INLINE_MAX:
                ok = self._rewrite(entry, tail, schema, {})
                return MergeOutcome.REWRITTEN if ok else MergeOutcome.DEFERRED
            writes.append((MergeItem(pos, VAR_HEAD_SIZE), VAR_HEAD.pack(f.type_code, len(v), v.ljust(INLINE_MAX, b"\0"))))
        writes.sort(key=lambda w: w[0].addr)
        for item, data in writes:
            self.plog.write_in_place(item.addr, data)
        self.stats.merge_flushes += cacheline_flush(self.region, [w[0] for w in writes])
        if self._publish(entry, tail, head, head, 0):
            return MergeOutcome.MERGED
        return MergeOutcome.DEFERRED

    def run_merges(self, limit: Optional[int] = None) -> int:
        """Drain up to ``limit`` queued merge requests on the calling thread."""
        done = 0
        while limit is None or done < limit:
            with self._merge_lock:
                if not self._merge_queue:
                    break
                key = self._merge_queue.popleft()
                self._merge_pending.discard(key)
            try:
                self.merge_chain(key)
            except KeyAbsent:
                pass
            done += 1
        return done

    def start_merge_worker(self, interval: float = 0.001) -> None:
        if self._merge_thread is not None:
            return
        self._stop.clear()

        def loop() -> None:
            while not self._stop.is_set():
                if not self.run_merges(self.merge_batch):
                    self._stop.wait(interval)

        self._merge_thread = threading.Thread(target=loop, name="focus-merge", daemon=True)
        self._merge_thread.start()

    def stop_merge_worker(self) -> None:
        if self._merge_thread is None:
            return
        self._stop.set()
        self._merge_thread.join()
        self._merge_thread = None

    # -- garbage collection ------------------------------------------------------
    def _move_row(self, addr: int, _size: int) -> bool:
        key = self.plog.row_key(addr)
        schema = self._schema(key)
        while True:
            entry = self.index.lookup(key)
            if entry is None or entry.head != addr:
                return False
            tail = self._tail(entry)
            if tail is None:
                continue
            values = self.collect_full(tail, schema)
            new_addr = self.plog.append_complete(encode_complete(schema, key, values), schema, relocation=True)
            if self._publish(entry, tail, new_addr, new_addr, 0, replace=values):
                self.plog.mark_invalid(addr)
                self.stats.gc_moved_rows += 1
                return True
            self.plog.mark_invalid(new_addr)

    def gc_chunk(self, chunk_id: int) -> int:
        with self._maint:
            return self._gc_chunk_locked(chunk_id)

    def _gc_chunk_locked(self, chunk_id: int) -> int:
        with self.guard.shared():
            copied = self.plog.relocate_rows(chunk_id, self._move_row)
        # readers may still be walking chains inside the chunk until they drain
        with self.guard.exclusive():
            self.plog.free_chunk(chunk_id)
        self.stats.gc_runs += 1
        return self.plog.chunk_size - copied

    def collect_garbage(self) -> int:
        with self._maint:
            return self._collect_garbage_locked()

    def _collect_garbage_locked(self) -> int:
        reclaimed = 0
        for cid in self.plog.gc_candidates():
            reclaimed += self._gc_chunk_locked(cid)
        return reclaimed

    # -- recovery ----------------------------------------------------------------
    def rebuild_index(self, scan: RecoveryScan) -> int:
        """Rebuild the index from a recovery scan; returns the number of live keys."""
        latest: dict[HierKey, tuple] = {}
        for row in scan.complete:
            rank = (row.chunk_epoch, row.addr)
            cur = latest.get(row.key)
            if cur is None or rank > cur[0]:
                latest[row.key] = (rank, row)
        known = {row.addr for row in scan.complete} | {d.addr for d in scan.deltas}
        children: dict[int, list[int]] = {}
        for d in scan.deltas:
            if d.prev in known:
                children.setdefault(d.prev, []).append(d.addr)
        # a crash can leave superseded heads valid; retire them so a later
        # delete plus GC of the newer row cannot resurrect an old value
        for row in scan.complete:
            if row.valid and latest[row.key][1] is not row:
                self.plog.mark_invalid(row.addr)
        count = 0
        for key, (_rank, row) in latest.items():
            if not row.valid:
                continue
            head = row.addr
            best, best_depth = head, 0
            stack = [(head, 0)]
            seen = {head}
            while stack:
                addr, depth = stack.pop()
                kids = children.get(addr, ())
                if not kids and addr != head and (best == head or addr > best):
                    best, best_depth = addr, depth
                for k in kids:
                    if k not in seen:
                        seen.add(k)
                        stack.append((k, depth + 1))
            self.index.insert(key, Location.log(best), chain_len=best_depth, head=head)
            count += 1
        return count
