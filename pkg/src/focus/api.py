"""Public key-value facade plus the flat-mapping baselines used for comparisons."""

from __future__ import annotations

import struct
import threading
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, Mapping, Optional, Sequence, TypeVar, Union

from focus.codec import values_list
from focus.config import EngineConfig
from focus.errors import CapacityExhausted, KeyAbsent, UnknownSchema
from focus.index import GlobalIndex
from focus.plog import PersistentLog
from focus.pmem import PmemRegion
from focus.schema import FieldDef, HierKey, SchemaDef, SchemaRegistry, resolve_fields
from focus.seacache import SeaCache
from focus.swim import SwimEngine

T = TypeVar("T")
FieldSpec = Union[FieldDef, tuple]


@dataclass
class AccessStats:
    ops: int = 0
    kv_suboperations: int = 0
    bytes_touched: int = 0


class _Scope:
    __slots__ = ("subops",)

    def __init__(self, subops: int) -> None:
        self.subops = subops


class _Meter:
    """Per-API counters; bytes come from the calling thread's backend tally."""

    def __init__(self, region: PmemRegion) -> None:
        self.region = region
        self.stats = AccessStats()
        self._lock = threading.Lock()

    @contextmanager
    def op(self, subops: int = 1):
        scope = _Scope(subops)
        r0, w0 = self.region.tally()
        try:
            yield scope
        finally:
            r1, w1 = self.region.tally()
            with self._lock:
                self.stats.ops += 1
                self.stats.kv_suboperations += scope.subops
                self.stats.bytes_touched += (r1 - r0) + (w1 - w0)

    def snapshot(self) -> AccessStats:
        with self._lock:
            return AccessStats(**asdict(self.stats))

    def reset(self) -> None:
        with self._lock:
            self.stats = AccessStats()


def _field_def(spec: FieldSpec) -> FieldDef:
    if isinstance(spec, FieldDef):
        return spec
    name, size = spec
    return FieldDef.variable(name) if size is None else FieldDef.fixed(name, size)


class Focus:
    """Schema-aware KV store: put / update / get / scan / delete over hierarchical keys."""

    def __init__(self, config: Optional[EngineConfig] = None, *, region: Optional[PmemRegion] = None,
                 recover: bool = False, clock: Optional[Callable[[], float]] = None) -> None:
        self.config = cfg = config or EngineConfig()
        if region is None:
            region = PmemRegion(cfg.region_bytes, cfg.path, track_durability=cfg.track_durability,
                                read_latency_ns=cfg.read_latency_ns, write_latency_ns=cfg.write_latency_ns)
        self.region = region
        self.registry = SchemaRegistry()
        scan = None
        if recover:
            self.plog, scan = PersistentLog.open(region, self.registry)
        else:
            self.plog = PersistentLog.create(region, self.registry, cfg.log)
        self.index = GlobalIndex()
        self.engine = SwimEngine(region, self.registry, self.plog, self.index,
                                 restore_threshold=cfg.restore_threshold,
                                 merge_queue_depth=cfg.merge_queue_depth, merge_batch=cfg.merge_batch)
        if scan is not None:
            self.engine.rebuild_index(scan)
        self.cache: Optional[SeaCache] = None
        if cfg.cache_enabled:
            self.cache = SeaCache(self.index, self.registry, cfg.cache, clock=clock, loader=self._load_row)
            self.engine.cache = self.cache
        self.meter = _Meter(region)
        if cfg.background_merge:
            self.engine.start_merge_worker()

    @classmethod
    def open(cls, region: PmemRegion, config: Optional[EngineConfig] = None, **kwargs) -> "Focus":
        """Recover a store from an existing region (e.g. one returned by ``simulate_crash``)."""
        return cls(config, region=region, recover=True, **kwargs)

    def _load_row(self, tail: int) -> list:
        with self.engine.guard.shared():
            return self.engine.collect_full(tail)

    def _with_space(self, fn: Callable[[], T]) -> T:
        while True:
            try:
                return fn()
            except CapacityExhausted:
                if not self.engine.collect_garbage():
                    raise

    # -- schemas and keys ----------------------------------------------------
    def create_schema(self, name: str, fields: Sequence[FieldSpec]) -> SchemaDef:
        return self.registry.create_schema(name, [_field_def(f) for f in fields])

    def schema(self, which: Union[str, int, SchemaDef]) -> SchemaDef:
        if isinstance(which, SchemaDef):
            return which
        if isinstance(which, str):
            return self.registry.by_name(which)
        return self.registry.get(which)

    def key(self, schema: Union[str, int, SchemaDef], primary_key: Union[bytes, str]) -> HierKey:
        if isinstance(primary_key, str):
            primary_key = primary_key.encode()
        return HierKey(self.schema(schema).schema_id, primary_key)

    # -- the six operations ----------------------------------------------------
    def put(self, key: HierKey, values: Union[Mapping, Sequence[bytes]]) -> None:
        with self.meter.op():
            self._with_space(lambda: self.engine.put_full(key, values))

    def update(self, key: HierKey, values: Mapping) -> None:
        schema = self.registry.get(key.schema_id)
        with self.meter.op():
            if len(values) == schema.field_count:
                # every field present: a full put, no delta
                vals = values_list(schema, values)
                if key not in self.index:
                    raise KeyAbsent(key)
                self._with_space(lambda: self.engine.put_full(key, vals))
            else:
                self._with_space(lambda: self.engine.update_partial(key, values))

    def get(self, key: HierKey, fields: Iterable[str] = ()) -> dict[str, bytes]:
        schema = self.registry.get(key.schema_id)
        fids = resolve_fields(schema, fields)
        with self.meter.op():
            if len(fids) == schema.field_count:
                vals = self.engine.read_full(key)
                return dict(zip(schema.field_names, vals))
            got = self.engine.read_partial(key, fids)
            return {schema.fields[fid].name: got[fid] for fid in sorted(got)}

    def scan(self, start_key: HierKey, fields: Iterable[str] = (), count: int = 100, *,
             with_keys: bool = False) -> list:
        """Up to ``count`` records of ``start_key``'s schema in key order, from ``start_key`` on."""
        if count < 0:
            raise ValueError("scan range must be >= 0")
        schema = self.registry.get(start_key.schema_id)
        fids = resolve_fields(schema, fields)
        full = len(fids) == schema.field_count
        out = []
        if count == 0:
            return out
        with self.meter.op(0) as scope:
            for entry in self.index.seek(start_key):
                if entry.key.schema_id != schema.schema_id:
                    break
                try:
                    if full:
                        row = dict(zip(schema.field_names, self.engine.read_full(entry.key)))
                    else:
                        got = self.engine.read_partial(entry.key, fids)
                        row = {schema.fields[fid].name: got[fid] for fid in sorted(got)}
                except KeyAbsent:
                    continue  # deleted after the seek saw it
                scope.subops += 1
                out.append((entry.key, row) if with_keys else row)
                if len(out) >= count:
                    break
        return out

    def delete(self, key: HierKey) -> None:
        with self.meter.op():
            self.engine.delete(key)

    # -- maintenance -----------------------------------------------------------
    def run_maintenance(self) -> None:
        """Drain queued merges and cache tasks on the calling thread."""
        self.engine.run_merges()
        if self.cache is not None:
            self.cache.process_pending()

    def collect_garbage(self) -> int:
        return self.engine.collect_garbage()

    def stats(self) -> dict:
        """Flat snapshot of API counters, backend flush counters and cache hit ratio."""
        out = asdict(self.meter.snapshot())
        out.update(self.region.snapshot_stats().as_dict())
        hits, misses = self.engine.stats.cache_hits, self.engine.stats.cache_misses
        out["hit_ratio"] = hits / (hits + misses) if hits + misses else 0.0
        out["index_probes"] = self.index.probes
        return out

    def close(self) -> None:
        self.engine.stop_merge_worker()
        if self.cache is not None:
            self.cache.stop()
        self.region.close()

    def __enter__(self) -> "Focus":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


# -- flat-mapping baselines ------------------------------------------------------

_BLOB_COUNT = struct.Struct("<H")
_BLOB_LEN = struct.Struct("<I")


def pack_record(values: Sequence[bytes]) -> bytes:
    parts = [_BLOB_COUNT.pack(len(values))]
    for v in values:
        parts.append(_BLOB_LEN.pack(len(v)))
        parts.append(v)
    return b"".join(parts)


def unpack_record(blob: bytes) -> list[bytes]:
    (count,) = _BLOB_COUNT.unpack_from(blob)
    pos = _BLOB_COUNT.size
    out = []
    for _ in range(count):
        (n,) = _BLOB_LEN.unpack_from(blob, pos)
        pos += _BLOB_LEN.size
        out.append(blob[pos:pos + n])
        pos += n
    return out


class _FlatAdapter:
    """Base for adapters storing opaque blobs in a one-variable-field schema."""

    schema_name = ""

    def __init__(self, store: Focus, field_names: Sequence[str]) -> None:
        self.store = store
        self.engine = store.engine
        self.field_names = list(field_names)
        try:
            self.flat = store.registry.by_name(self.schema_name)
        except UnknownSchema:
            self.flat = store.create_schema(self.schema_name, [FieldDef.variable("value")])
        self.meter = _Meter(store.region)

    def _flat_key(self, raw: bytes) -> HierKey:
        return HierKey(self.flat.schema_id, raw)

    def _put_blob(self, raw_key: bytes, blob: bytes) -> None:
        self.store._with_space(lambda: self.engine.put_full(self._flat_key(raw_key), [blob]))

    def _get_blob(self, raw_key: bytes) -> bytes:
        return self.engine.read_full(self._flat_key(raw_key))[0]

    def _names(self, fields: Iterable[str]) -> list[str]:
        names = list(fields)
        for n in names:
            if n not in self.field_names:
                raise KeyError(n)
        return names or self.field_names

    @property
    def stats(self) -> AccessStats:
        return self.meter.snapshot()


class ConsolidatedAdapter(_FlatAdapter):
    """Every record is one KV pair whose value is the serialized field list."""

    schema_name = "__consolidated__"

    def put(self, pk: bytes, values: Mapping[str, bytes]) -> None:
        blob = pack_record([bytes(values[n]) for n in self.field_names])
        with self.meter.op():
            self._put_blob(pk, blob)

    def get(self, pk: bytes, fields: Iterable[str] = ()) -> dict[str, bytes]:
        names = self._names(fields)
        with self.meter.op():
            row = dict(zip(self.field_names, unpack_record(self._get_blob(pk))))
        return {n: row[n] for n in names}

    def update(self, pk: bytes, values: Mapping[str, bytes]) -> None:
        # read-modify-write of the whole blob
        with self.meter.op(2):
            row = dict(zip(self.field_names, unpack_record(self._get_blob(pk))))
            row.update({n: bytes(v) for n, v in values.items()})
            self._put_blob(pk, pack_record([row[n] for n in self.field_names]))

    def scan(self, start_pk: bytes, fields: Iterable[str] = (), count: int = 100) -> list[dict[str, bytes]]:
        names = self._names(fields)
        out = []
        if count <= 0:
            return out
        with self.meter.op(0) as scope:
            for entry in self.store.index.seek(self._flat_key(start_pk)):
                if entry.key.schema_id != self.flat.schema_id:
                    break
                try:
                    row = dict(zip(self.field_names, unpack_record(self._get_blob(entry.key.primary_key))))
                except KeyAbsent:
                    continue
                scope.subops += 1
                out.append({n: row[n] for n in names})
                if len(out) >= count:
                    break
        return out

    def delete(self, pk: bytes) -> None:
        with self.meter.op():
            self.engine.delete(self._flat_key(pk))


class ScatteredAdapter(_FlatAdapter):
    """Every attribute is its own KV pair keyed ``pk + b"/" + attribute``."""

    schema_name = "__scattered__"

    @staticmethod
    def _attr_key(pk: bytes, name: str) -> bytes:
        return pk + b"/" + name.encode()

    def put(self, pk: bytes, values: Mapping[str, bytes]) -> None:
        with self.meter.op(len(self.field_names)):
            for n in self.field_names:
                self._put_blob(self._attr_key(pk, n), bytes(values[n]))

    def get(self, pk: bytes, fields: Iterable[str] = ()) -> dict[str, bytes]:
        names = self._names(fields)
        with self.meter.op(len(names)):
            return {n: self._get_blob(self._attr_key(pk, n)) for n in names}

    def update(self, pk: bytes, values: Mapping[str, bytes]) -> None:
        with self.meter.op(len(values)):
            if self._flat_key(self._attr_key(pk, self.field_names[0])) not in self.store.index:
                raise KeyAbsent(pk)
            for n, v in values.items():
                if n not in self.field_names:
                    raise KeyError(n)
                self._put_blob(self._attr_key(pk, n), bytes(v))

    def scan(self, start_pk: bytes, fields: Iterable[str] = (), count: int = 100) -> list[dict[str, bytes]]:
        names = self._names(fields)
        out = []
        if count <= 0:
            return out
        with self.meter.op(0) as scope:
            last = None
            for entry in self.store.index.seek(self._flat_key(start_pk)):
                if entry.key.schema_id != self.flat.schema_id:
                    break
                pk = entry.key.primary_key.rsplit(b"/", 1)[0]
                if pk == last:
                    continue
                last = pk
                try:
                    row = {n: self._get_blob(self._attr_key(pk, n)) for n in names}
                except KeyAbsent:
                    continue
                scope.subops += len(names)
                out.append(row)
                if len(out) >= count:
                    break
        return out

    def delete(self, pk: bytes) -> None:
        with self.meter.op(len(self.field_names)):
            for n in self.field_names:
                self.engine.delete(self._flat_key(self._attr_key(pk, n)))
