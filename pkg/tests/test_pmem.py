import threading

import pytest
from hypothesis import given, settings, strategies as st

from focus.errors import OutOfRange, SimulatedCrash, UnalignedFlush
from focus.pmem import CACHELINE, PmemRegion


def test_counters_and_bounds():
    r = PmemRegion(4096)
    r.write_at(0, b"x" * 8)
    assert r.stats.bytes_written == 8
    with pytest.raises(OutOfRange):
        r.write_at(4090, b"x" * 8)
    with pytest.raises(OutOfRange):
        r.read(-1, 2)
    with pytest.raises(UnalignedFlush):
        r.flush(3)
    r.flush(0)
    r.flush(0)
    r.fence()
    assert (r.stats.cacheline_flushes, r.stats.fences) == (2, 1)


def test_reads_see_zeroes_and_round_to_256():
    r = PmemRegion(4096)
    assert r.read(100, 10) == bytes(10)
    r.read(250, 10)  # straddles the 256 B block boundary
    assert r.stats.bytes_read == 20
    assert r.stats.reads_256b_rounded == 256 + 512


def test_only_fenced_lines_survive():
    r = PmemRegion(1024)
    r.write_at(0, b"a" * 200)
    r.flush(0)
    r.flush(128)
    r.fence()
    r.flush(64)  # pending but never fenced
    crashed = r.simulate_crash()
    img = crashed.read(0, 200)
    assert img[:64] == b"a" * 64
    assert img[64:128] == bytes(64)
    assert img[128:192] == b"a" * 64
    assert img[192:] == bytes(8)


def test_crash_right_after_fence_matches_live():
    r = PmemRegion(512)
    r.persist(10, b"hello world" * 20)
    assert r.simulate_crash().read(0, 512) == r.read(0, 512)


def test_crash_after_freezes_durable_image():
    r = PmemRegion(512)
    r.persist(0, b"keep")
    r.crash_after(2)
    r.write_at(64, b"lost")
    with pytest.raises(SimulatedCrash):
        r.flush(64)
    img = r.simulate_crash()
    assert img.read(0, 4) == b"keep" and img.read(64, 4) == bytes(4)


def test_file_backed_region_persists(tmp_path):
    path = str(tmp_path / "pm.img")
    r = PmemRegion(4096, path)
    r.persist(128, b"durable")
    r.close()
    again = PmemRegion(4096, path)
    assert again.read(128, 7) == b"durable"
    again.close()


def test_tally_is_per_thread():
    r = PmemRegion(4096)
    out = {}

    def work():
        r.write_at(0, b"z" * 100)
        r.read(0, 30)
        out["t"] = r.tally()

    t = threading.Thread(target=work)
    t.start()
    t.join()
    assert out["t"] == (30, 100)
    assert r.tally() == (0, 0)


ops = st.lists(st.one_of(
    st.tuples(st.just("w"), st.integers(0, 1000), st.binary(min_size=1, max_size=90)),
    st.tuples(st.just("f"), st.integers(0, 15)),
    st.tuples(st.just("F"),),
), max_size=40)


@settings(max_examples=300, deadline=None)
@given(ops)
def test_durability_matches_shadow_twin(schedule):
    cap = 1024
    r = PmemRegion(cap)
    live, durable, pending = bytearray(cap), bytearray(cap), set()
    for op in schedule:
        if op[0] == "w":
            addr, data = op[1], op[2][: cap - op[1]]
            r.write_at(addr, data)
            live[addr:addr + len(data)] = data
        elif op[0] == "f":
            r.flush(op[1] * CACHELINE)
            pending.add(op[1])
        else:
            r.fence()
            for line in pending:
                a = line * CACHELINE
                durable[a:a + CACHELINE] = live[a:a + CACHELINE]
            pending.clear()
    assert r.simulate_crash().read(0, cap) == bytes(durable)
    assert r.read(0, cap) == bytes(live)
