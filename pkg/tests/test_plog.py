import pytest

from focus.codec import decode_complete, decode_delta, encode_complete, encode_delta
from focus.errors import BadAddress, BadSuperblock, CapacityExhausted, DLogFull, InvalidRow, SimulatedCrash
from focus.plog import LogConfig, PersistentLog
from focus.pmem import PmemRegion
from focus.schema import FieldDef, HierKey, SchemaRegistry

CFG = LogConfig(clog_size=4096, dlog_size=1024, schema_region_size=4096)


def make_log(capacity=64 << 10, cfg=CFG):
    region = PmemRegion(capacity)
    reg = SchemaRegistry()
    log = PersistentLog.create(region, reg, cfg)
    s = reg.create_schema("t", [FieldDef.fixed("a", 8), FieldDef.variable("v")])
    return region, reg, log, s


def row(s, pk, a=b"A" * 8, v=b"v"):
    return encode_complete(s, HierKey(s.schema_id, pk), [a, v])


def test_appends_are_increasing_and_round_trip():
    _, _, log, s = make_log()
    a1 = log.append_complete(row(s, b"k1", v=b"x" * 50), s)
    a2 = log.append_complete(row(s, b"k2"), s)
    assert a2 > a1
    assert decode_complete(log.read_row(a1), s) == [b"A" * 8, b"x" * 50]
    d = log.append_delta(encode_delta(s, {1: b"y" * 20}, prev=a1), s)
    img = log.read_row(d)
    assert img.chain_pointer == a1 and decode_delta(img, s) == {1: b"y" * 20}


def test_delta_lands_in_owning_chunk():
    _, _, log, s = make_log()
    first = log.append_complete(row(s, b"k0", v=b"x" * 1000), s)
    addrs = [log.append_complete(row(s, b"k%d" % i, v=b"x" * 1000), s) for i in range(1, 8)]
    later = addrs[-1]
    assert log.chunk_of(first) is not log.chunk_of(later)
    for head in (first, later):
        d = log.append_delta(encode_delta(s, {0: b"B" * 8}, prev=head), s)
        chunk = log.chunk_of(head)
        assert chunk.dlog_base <= d < chunk.dlog_base + chunk.dlog_cap


def test_rows_spill_into_next_chunk_base():
    _, _, log, s = make_log()
    big = row(s, b"k", v=b"x" * 3000)
    a1 = log.append_complete(big, s)
    a2 = log.append_complete(big, s)
    c2 = log.chunk_of(a2)
    assert a2 == c2.clog_base and c2 is not log.chunk_of(a1)


def test_capacity_exhausted():
    _, _, log, s = make_log(capacity=32 << 10)
    with pytest.raises(CapacityExhausted):
        for i in range(100):
            log.append_complete(row(s, b"%d" % i, v=b"x" * 3000), s)


def test_dlog_full():
    _, _, log, s = make_log()
    head = log.append_complete(row(s, b"k"), s)
    with pytest.raises(DLogFull):
        for _ in range(200):
            log.append_delta(encode_delta(s, {1: b"z" * 40}, prev=head), s)


def test_mark_invalid_is_idempotent_and_accounted():
    _, _, log, s = make_log()
    img = row(s, b"k", v=b"q" * 30)
    addr = log.append_complete(img, s)
    chunk = log.chunk_of(addr)
    before = chunk.live_bytes
    log.mark_invalid(addr)
    log.mark_invalid(addr)
    assert chunk.live_bytes == before - len(img)
    with pytest.raises(InvalidRow):
        decode_complete(log.read_row(addr), s)
    d = log.append_delta(encode_delta(s, {0: b"B" * 8}, prev=addr), s)
    with pytest.raises(BadAddress):
        log.mark_invalid(d)


def test_bad_addresses():
    _, _, log, s = make_log()
    with pytest.raises(BadAddress):
        log.read_row(5)
    addr = log.append_complete(row(s, b"k"), s)
    with pytest.raises(BadAddress):
        log.read_row(addr + 4096 * 3)


def test_read_fields_reads_only_slices():
    region, _, log, s = make_log()
    addr = log.append_complete(row(s, b"key", v=b"w" * 100), s)
    before = region.stats.bytes_read
    found, prev = log.read_fields(addr, s, {0})
    assert found == {0: b"A" * 8} and prev is None
    assert region.stats.bytes_read - before == 4 + 8


def test_recovery_scan_and_schema_reload():
    region, _, log, s = make_log()
    a = log.append_complete(row(s, b"k1"), s)
    b = log.append_complete(row(s, b"k2"), s)
    log.mark_invalid(a)
    d = log.append_delta(encode_delta(s, {0: b"C" * 8}, prev=b), s)
    reg2 = SchemaRegistry()
    log2, scan = PersistentLog.open(region.simulate_crash(), reg2)
    assert reg2.by_name("t") == s
    assert [(r.addr, r.key.primary_key, r.valid) for r in scan.complete] == [(a, b"k1", False), (b, b"k2", True)]
    assert [(r.addr, r.prev) for r in scan.deltas] == [(d, b)]
    # appends continue after the recovered cursors
    assert log2.append_complete(row(s, b"k3"), s) > b


@pytest.mark.parametrize("crash_at", range(1, 8))
def test_torn_append_is_never_surfaced(crash_at):
    region, _, log, s = make_log()
    log.append_complete(row(s, b"k1"), s)
    region.crash_after(crash_at)
    big = row(s, b"k2", v=b"t" * 300)
    try:
        log.append_complete(big, s)
        done = True
    except SimulatedCrash:
        done = False
    reg = SchemaRegistry()
    log2, scan = PersistentLog.open(region.simulate_crash(), reg)
    keys = [r.key.primary_key for r in scan.complete]
    assert keys in ([b"k1"], [b"k1", b"k2"])
    if done:
        assert keys == [b"k1", b"k2"]
    if len(keys) == 2:
        assert decode_complete(log2.read_row(scan.complete[1].addr), s) == [b"A" * 8, b"t" * 300]
    # a shorter row written over the torn area must not expose leftovers
    log2.append_complete(row(s, b"k3"), s)
    _, scan2 = PersistentLog.open(log2.region.simulate_crash(), SchemaRegistry())
    assert [r.key.primary_key for r in scan2.complete] == keys + [b"k3"]


def test_open_rejects_garbage():
    with pytest.raises(BadSuperblock):
        PersistentLog.open(PmemRegion(64 << 10), SchemaRegistry())


def test_gc_chunk_without_live_rows_reclaims_everything():
    _, _, log, s = make_log()
    big = row(s, b"k", v=b"x" * 3000)
    a1 = log.append_complete(big, s)
    log.append_complete(big, s)  # opens a second chunk; the first is sealed
    log.mark_invalid(a1)
    cid = log.chunk_of(a1).chunk_id
    moved = []
    assert log.gc_chunk(cid, lambda addr, size: moved.append(addr) or True) == log.chunk_size
    assert moved == []
    assert cid not in log.chunks
    # the freed chunk is reused, zeroed, for a later allocation
    again = [log.append_complete(big, s) for _ in range(2)]
    assert any(log.chunk_of(x).chunk_id == cid for x in again)
