import random
import threading

import pytest
from hypothesis import given, settings, strategies as st

from focus import FieldDef, Focus
from focus.errors import ChecksumMismatch, SimulatedCrash
from focus.index import Location
from focus.schema import build_schema
from focus.seacache import (
    Page,
    SchemaStats,
    Task,
    TaskKind,
    TaskQueue,
    lifetime,
    retention_window,
    should_admit,
)

from conftest import small_config, ten_fields


class Clock:
    def __init__(self):
        self.now = 0.0

    def __call__(self):
        return self.now


def cached_db(clock=None, **cache_overrides):
    cfg = small_config(cache=True)
    cfg.cache.mode = "manual"
    for k, v in cache_overrides.items():
        setattr(cfg.cache, k, v)
    db = Focus(cfg, clock=clock or Clock())
    db.create_schema("w", ten_fields())
    db.create_schema("v", [FieldDef.fixed("a", 8), FieldDef.variable("s")])
    return db


def row(n):
    return [b"%02d%06d" % (f, n) for f in range(10)]


def admit(db, key):
    db.engine.read_full(key)
    db.cache.process_pending()
    assert db.index.peek(key).loc.is_cache


# -- formulas ------------------------------------------------------------------

def test_lifetime_examples():
    assert lifetime(0.5, 0.5, 8000, 0) == 2000
    assert lifetime(0.5, 0.5, 8000, 2) == lifetime(0.5, 0.5, 8000, 0) / 4
    assert lifetime(0.9, 1.0, 2000, 0) == 0


@given(st.floats(0, 1), st.floats(0, 1), st.floats(1, 1e5), st.integers(0, 30))
def test_lifetime_is_exact_product_and_monotone(h, ro, rw, n):
    assert lifetime(h, ro, rw, n) == 2.0 ** -n * h * (1 - ro) * rw
    assert lifetime(h, ro, rw, n + 1) <= lifetime(h, ro, rw, n)
    assert lifetime(h, min(1, ro + 0.1), rw, n) <= lifetime(h, ro, rw, n)
    assert lifetime(min(1, h + 0.1), ro, rw, n) >= lifetime(h, ro, rw, n)


def test_retention_bands():
    assert retention_window(0.1) == 2000
    assert retention_window(0.5) == 8000
    assert retention_window(0.9) == 2000


def test_should_admit_rules():
    rng = random.Random(1)
    assert all(should_admit(SchemaStats(1, hit_ratio=0.6), rng) for _ in range(1000))
    assert not any(should_admit(SchemaStats(1, hit_ratio=0.0), rng) for _ in range(1000))
    assert should_admit(SchemaStats(1, hit_ratio=0.0), rng, warming=True)
    with pytest.raises(ValueError):
        should_admit(SchemaStats(1), rng, hit_threshold=0)
    st_ = SchemaStats(1, hit_ratio=0.25)
    freq = sum(should_admit(st_, rng) for _ in range(100_000)) / 100_000
    assert abs(freq - 0.5) <= 0.02


def test_hit_ratio_average():
    s = SchemaStats(1)
    for hit in (True, False, True, True):
        s.record(hit, 0.05)
    assert s.hit_ratio == pytest.approx(0.75)  # running mean inside the first window
    for _ in range(200):
        s.record(False, 0.05)
    assert 0 <= s.hit_ratio < 0.01


def test_first_zero_bit_slot():
    page = Page(0, 4096)
    page.format(build_schema(1, "t", ten_fields()), 128, 4096)
    assert page.first_free() == 0
    page.bitmap = 0b0111
    assert page.first_free() == 3


# -- read path -----------------------------------------------------------------

def test_hit_serves_without_log_reads_and_one_probe():
    db = cached_db()
    k = db.key("w", b"k")
    db.put(k, row(1))
    probes = db.index.probes
    db.engine.read_full(k)  # miss
    assert db.index.probes - probes == 1
    db.cache.process_pending()
    assert db.index.peek(k).loc.is_cache
    before = db.region.stats.bytes_read
    probes = db.index.probes
    assert db.engine.read_full(k) == row(1)
    assert db.engine.read_partial(k, {3}) == {3: row(1)[3]}
    assert db.region.stats.bytes_read == before
    assert db.index.probes - probes == 2
    db.close()


def test_lookup_of_log_resident_key_probes_no_cache_structure():
    db = cached_db()
    k = db.key("w", b"k")
    db.put(k, row(1))
    assert db.cache.lookup(k) is None
    assert db.cache.counters.probes == 0
    admit(db, k)
    hit = db.cache.lookup(k)
    assert hit.values == row(1) and hit.plog_addr == db.index.peek(k).head
    db.close()


def test_checksum_failure_heals_from_log():
    db = cached_db()
    k = db.key("w", b"k")
    db.put(k, row(1))
    admit(db, k)
    loc = db.index.peek(k).loc
    page = db.cache.pages[loc.page]
    page.data[page.offset(loc.slot) + 40] ^= 0xFF
    with pytest.raises(ChecksumMismatch):
        db.cache.lookup(k)
    assert db.engine.read_full(k) == row(1)  # served from the log
    db.cache.process_pending()
    assert db.cache.counters.repaired == 1
    before = db.region.stats.bytes_read
    assert db.engine.read_full(k) == row(1)
    assert db.region.stats.bytes_read == before
    db.close()


def test_fixed_update_absorbed_variable_update_detaches():
    db = cached_db()
    k = db.key("v", b"k")
    db.put(k, [b"A" * 8, b"s" * 30])
    admit(db, k)
    db.update(k, {"a": b"B" * 8})
    assert db.index.peek(k).loc.is_cache
    before = db.region.stats.bytes_read
    assert db.get(k) == {"a": b"B" * 8, "s": b"s" * 30}
    assert db.region.stats.bytes_read == before
    db.update(k, {"s": b"short"})
    assert not db.index.peek(k).loc.is_cache
    assert db.get(k) == {"a": b"B" * 8, "s": b"short"}
    db.close()


def test_crash_between_log_append_and_cache_update():
    db = cached_db()
    k = db.key("w", b"k")
    db.put(k, row(1))
    admit(db, k)

    def crash(*a, **kw):
        raise SimulatedCrash("power lost before the cache saw the update")

    db.cache.swing = crash
    with pytest.raises(SimulatedCrash):
        db.engine.update_partial(k, {0: b"NEWVALUE"})
    again = Focus.open(db.region.simulate_crash(), small_config())
    assert again.engine.read_full(k)[0] == b"NEWVALUE"
    again.close()


# -- eviction --------------------------------------------------------------------

def fill(db, n, clock, step=0.0, start=0):
    keys = []
    for i in range(start, start + n):
        k = db.key("w", b"%05d" % i)
        db.put(k, row(i))
        db.engine.read_full(k)
        db.cache.process_pending()
        clock.now += step
        keys.append(k)
    return keys


def test_eviction_pass_stops_at_target():
    clock = Clock()
    db = cached_db(clock, capacity_bytes=8 * 4096, evict_trigger=2.0)
    keys = fill(db, 1, clock, step=1.0)
    cache = db.cache
    per_page = cache.pages[0].nslots
    keys += fill(db, 8 * per_page - 1, clock, step=1.0, start=1)
    assert cache.counters.pool_exhausted == 0
    assert cache.usage() == pytest.approx(1.0)
    assert cache.cached_rows() == 8 * per_page
    clock.now += 1e9  # everything is stale
    n = cache.evict_pass(0.8)
    assert n > 0 and cache.usage() <= 0.8
    assert cache.usage() > 0.8 - 1.0 / (8 * per_page) - 1e-9  # halts as soon as the target is met
    cache.check_pages()
    for i, k in enumerate(keys):
        assert db.engine.read_full(k) == row(i)
    db.close()


def test_no_stale_rows_bumps_fail_count_and_halves_lifetime():
    clock = Clock()
    db = cached_db(clock, capacity_bytes=4 * 4096, evict_trigger=2.0, max_sweeps=1)
    fill(db, 1, clock)
    cache = db.cache
    fill(db, 4 * cache.pages[0].nslots - 1, clock, start=1)
    st_ = cache.stats_for(db.schema("w").schema_id)
    st_.hit_ratio = 0.5
    st_.retention_ms = 1e6
    base = cache.lifetime(st_)
    ro = st_.row_occupancy
    assert base == pytest.approx(0.5 * (1 - ro) * 1e6)
    assert cache.evict_pass(0.1) == 0
    assert st_.fail_count == 1
    assert cache.lifetime(st_) == base / 2
    cache.evict_pass(0.1)
    assert st_.fail_count == 2 and cache.lifetime(st_) == base / 4
    # shrinking lifetimes eventually make rows stale; one eviction resets N
    clock.now = base / 4 + 1
    assert cache.evict_pass(0.1) > 0
    assert st_.fail_count == 0
    db.close()


def test_pool_exhaustion_rejects_and_schedules_eviction():
    clock = Clock()
    db = cached_db(clock, capacity_bytes=2 * 4096, evict_trigger=2.0)
    keys = fill(db, 200, clock)
    assert db.cache.counters.pool_exhausted > 0
    assert db.cache.usage() <= 1.0
    db.cache.check_pages()
    for i, k in enumerate(keys):
        assert db.get(k)["f3"] == row(i)[3]
    db.close()


# -- task queue ------------------------------------------------------------------

def test_queue_roundtrip_and_full_policies():
    q = TaskQueue(2)
    t = Task(TaskKind.REFRESH, None, ts=3.0)
    assert q.offer(t) and q.poll() is t and q.poll() is None
    db = cached_db(task_queue_len=1)
    k = db.key("w", b"k")
    db.put(k, row(1))
    entry = db.index.peek(k)
    db.cache.request_refresh(entry)
    db.cache.request_refresh(entry)
    assert db.cache.counters.dropped_refresh == 1
    db.cache.process_pending()
    db.cache.request_writeback(entry)
    db.cache.request_admit(entry, None)
    assert db.cache.counters.queue_full_admits == 1
    db.close()


def test_queue_many_producers_one_consumer():
    q = TaskQueue(1024)
    producers, per = 4, 50_000
    offered = [[] for _ in range(producers)]
    got = []
    done = threading.Event()

    def produce(p):
        for i in range(per):
            if q.offer((p, i)):
                offered[p].append(i)

    def consume():
        while not done.is_set() or len(q):
            item = q.poll()
            if item is not None:
                got.append(item)

    c = threading.Thread(target=consume)
    c.start()
    ps = [threading.Thread(target=produce, args=(p,)) for p in range(producers)]
    for t in ps:
        t.start()
    for t in ps:
        t.join()
    done.set()
    c.join()
    assert len(got) == len(set(got)) == sum(map(len, offered))
    for p in range(producers):
        assert [i for (pp, i) in got if pp == p] == offered[p]


# -- invariants --------------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["get", "upd", "put", "del", "evict", "tick"]),
                          st.integers(0, 40), st.integers(0, 9)), max_size=120))
def test_cache_is_transparent_and_bitmaps_consistent(ops):
    clock = Clock()
    on = cached_db(clock, capacity_bytes=3 * 4096)
    off = Focus(small_config())
    off.create_schema("w", ten_fields())
    off.create_schema("v", [FieldDef.fixed("a", 8), FieldDef.variable("s")])
    live = set()
    for op, n, f in ops:
        k = on.key("w", b"%03d" % n)
        if op == "put" or (op in ("get", "upd") and k not in live):
            for db in (on, off):
                db.put(k, row(n))
            live.add(k)
        elif op == "get":
            assert on.get(k) == off.get(k)
            assert on.get(k, [f"f{f}"]) == off.get(k, [f"f{f}"])
        elif op == "upd":
            for db in (on, off):
                db.update(k, {f: b"U%07d" % n})
        elif op == "del":
            for db in (on, off):
                db.delete(k)
            live.discard(k)
        elif op == "evict":
            on.cache.evict_pass(0.0)
        else:
            clock.now += 5000
        on.run_maintenance()
        on.cache.check_pages()
        for key in list(live):
            e = on.index.peek(key)
            if e.loc.is_cache:
                assert on.cache.tail_of(e) is not None
    for key in live:
        assert on.engine.read_full(key) == off.engine.read_full(key)
    on.close()
    off.close()
