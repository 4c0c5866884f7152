"""Run an op stream against FOCUS or a flat-mapping baseline and report counters."""

from __future__ import annotations

import threading
import time
from dataclasses import astuple, dataclass, fields
from typing import Iterable, Optional, Sequence

from focus.api import ConsolidatedAdapter, Focus, ScatteredAdapter
from focus.bench.workload import Op, OpKind, WorkloadSpec, field_value, generate, record_key
from focus.config import EngineConfig
from focus.errors import KeyAbsent
from focus.schema import FieldDef

HIST_BUCKETS = 100_000  # 1 us buckets up to 100 ms; the last one collects overflow


@dataclass
class ReportRow:
    engine: str
    workload: str
    threads: int
    ops_per_s: float
    p50_us: float
    p99_us: float
    bytes_read: int
    bytes_written: int
    flushes: int
    fences: int
    hit_ratio: float
    suboperations: int

    @classmethod
    def header(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def values(self) -> list:
        return list(astuple(self))


class LatencyHistogram:
    def __init__(self) -> None:
        self.counts = [0] * (HIST_BUCKETS + 1)
        self.total = 0

    def record(self, ns: int) -> None:
        self.counts[min(ns // 1000, HIST_BUCKETS)] += 1
        self.total += 1

    def merge(self, other: "LatencyHistogram") -> None:
        for i, c in enumerate(other.counts):
            if c:
                self.counts[i] += c
        self.total += other.total

    def percentile(self, p: float) -> float:
        """Upper edge (us) of the bucket holding the p-th percentile."""
        if not self.total:
            return 0.0
        rank = max(1, int(round(p / 100.0 * self.total)))
        seen = 0
        for i, c in enumerate(self.counts):
            seen += c
            if seen >= rank:
                return float(min(i + 1, HIST_BUCKETS))
        return float(HIST_BUCKETS)


class Target:
    """Common surface over the three engines, addressed by integer record ids."""

    name = ""

    def __init__(self, spec: WorkloadSpec, config: EngineConfig) -> None:
        self.spec = spec
        self.store = Focus(config)
        self.names = [f"field{i}" for i in range(spec.field_count)]

    def full_values(self, key_id: int, version: int = 0) -> dict[str, bytes]:
        size = self.spec.field_size
        return {n: field_value(key_id, i, version, size) for i, n in enumerate(self.names)}

    def put(self, key_id: int, values: dict[str, bytes]) -> None:
        raise NotImplementedError

    def read(self, key_id: int, fids: Sequence[int]) -> dict[str, bytes]:
        raise NotImplementedError

    def update(self, key_id: int, values: dict[str, bytes]) -> None:
        raise NotImplementedError

    def scan(self, key_id: int, fids: Sequence[int], width: int) -> list:
        raise NotImplementedError

    def suboperations(self) -> int:
        raise NotImplementedError

    def counters(self) -> tuple[int, int, int, int, int, int, int]:
        s = self.store.region.snapshot_stats()
        e = self.store.engine.stats
        return (s.bytes_read, s.bytes_written, s.cacheline_flushes, s.fences,
                e.cache_hits, e.cache_misses, self.suboperations())

    def quiesce(self) -> None:
        self.store.run_maintenance()

    def close(self) -> None:
        self.store.close()


class FocusTarget(Target):
    name = "focus"

    def __init__(self, spec: WorkloadSpec, config: EngineConfig) -> None:
        super().__init__(spec, config)
        self.schema = self.store.create_schema(
            "usertable", [FieldDef.fixed(n, spec.field_size) for n in self.names])

    def _key(self, key_id: int):
        return self.store.key(self.schema, record_key(key_id))

    def put(self, key_id, values):
        self.store.put(self._key(key_id), values)

    def read(self, key_id, fids):
        return self.store.get(self._key(key_id), [self.names[f] for f in fids])

    def update(self, key_id, values):
        self.store.update(self._key(key_id), values)

    def scan(self, key_id, fids, width):
        return self.store.scan(self._key(key_id), [self.names[f] for f in fids], width)

    def suboperations(self) -> int:
        return self.store.meter.snapshot().kv_suboperations


class _AdapterTarget(Target):
    adapter_cls: type = ConsolidatedAdapter

    def __init__(self, spec: WorkloadSpec, config: EngineConfig) -> None:
        super().__init__(spec, config)
        self.adapter = self.adapter_cls(self.store, self.names)

    def put(self, key_id, values):
        self.adapter.put(record_key(key_id), values)

    def read(self, key_id, fids):
        return self.adapter.get(record_key(key_id), [self.names[f] for f in fids])

    def update(self, key_id, values):
        self.adapter.update(record_key(key_id), values)

    def scan(self, key_id, fids, width):
        return self.adapter.scan(record_key(key_id), [self.names[f] for f in fids], width)

    def suboperations(self) -> int:
        return self.adapter.stats.kv_suboperations


class ConsolidatedTarget(_AdapterTarget):
    name = "consolidated"
    adapter_cls = ConsolidatedAdapter


class ScatteredTarget(_AdapterTarget):
    name = "scattered"
    adapter_cls = ScatteredAdapter


TARGETS = {t.name: t for t in (FocusTarget, ConsolidatedTarget, ScatteredTarget)}


def make_target(engine: str, spec: WorkloadSpec, config: Optional[EngineConfig] = None) -> Target:
    return TARGETS[engine](spec, config or bench_config())


def bench_config(**overrides) -> EngineConfig:
    cfg = EngineConfig(track_durability=False)
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


def preload(target: Target) -> None:
    for i in range(target.spec.record_count):
        target.put(i, target.full_values(i))
    target.quiesce()


def execute(target: Target, op: Op) -> None:
    spec = target.spec
    kind = op.kind
    try:
        if kind is OpKind.READ:
            target.read(op.key, ())
        elif kind is OpKind.READ_P:
            target.read(op.key, op.fields)
        elif kind is OpKind.UPDATE:
            target.update(op.key, _one_field(target, op))
        elif kind is OpKind.INSERT:
            target.put(op.key, target.full_values(op.key))
        elif kind is OpKind.SCAN:
            target.scan(op.key, (), spec.scan_width)
        elif kind is OpKind.SCAN_P:
            target.scan(op.key, op.fields, spec.scan_width)
        elif kind is OpKind.RMW:
            target.read(op.key, ())
            target.update(op.key, _one_field(target, op))
    except KeyAbsent:
        # a latest-read racing an insert owned by another shard
        pass


def _one_field(target: Target, op: Op) -> dict[str, bytes]:
    f = op.fields[0]
    return {target.names[f]: field_value(op.key, f, op.seq + 1, target.spec.field_size)}


def _worker(target: Target, ops: Iterable[Op], hist: LatencyHistogram, start: threading.Barrier) -> None:
    clock = time.perf_counter_ns
    start.wait()
    for op in ops:
        t0 = clock()
        execute(target, op)
        hist.record(clock() - t0)


def run(target: Target, threads: int = 1, seed: int = 0, ops: Optional[Sequence[Op]] = None) -> ReportRow:
    """Execute the workload's op stream on an already preloaded target, split over ``threads`` shards."""
    if ops is None:
        ops = list(generate(target.spec, seed))
    shards = [ops[t::threads] for t in range(threads)]
    hists = [LatencyHistogram() for _ in range(threads)]
    barrier = threading.Barrier(threads + 1)
    workers = [threading.Thread(target=_worker, args=(target, shards[t], hists[t], barrier), daemon=True)
               for t in range(threads)]
    before = target.counters()
    for w in workers:
        w.start()
    barrier.wait()
    t0 = time.perf_counter()
    for w in workers:
        w.join()
    elapsed = time.perf_counter() - t0
    after = target.counters()
    d = [a - b for a, b in zip(after, before)]
    hist = LatencyHistogram()
    for h in hists:
        hist.merge(h)
    hits, misses = d[4], d[5]
    return ReportRow(
        engine=target.name,
        workload=target.spec.name,
        threads=threads,
        ops_per_s=round(len(ops) / elapsed, 1) if elapsed > 0 else 0.0,
        p50_us=hist.percentile(50),
        p99_us=hist.percentile(99),
        bytes_read=d[0],
        bytes_written=d[1],
        flushes=d[2],
        fences=d[3],
        hit_ratio=round(hits / (hits + misses), 4) if hits + misses else 0.0,
        suboperations=d[6],
    )
