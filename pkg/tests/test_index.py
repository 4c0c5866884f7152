import threading

import pytest
from hypothesis import given, strategies as st

from focus.errors import KeyAbsent
from focus.index import GlobalIndex, IndexEntry, Location
from focus.schema import HierKey


def k(n, sid=1):
    return HierKey(sid, b"%04d" % n)


def test_basic_map_semantics():
    idx = GlobalIndex()
    assert idx.get(k(1)) is None
    assert idx.insert(k(1), Location.log(10))
    assert not idx.insert(k(1), Location.log(11))
    assert idx.get(k(1)) == Location.log(10)
    assert idx.remove(k(1)) and not idx.remove(k(1))
    assert idx.get(k(1)) is None


def test_cas_update():
    idx = GlobalIndex()
    idx.insert(k(1), Location.log(10), chain_len=2, head=5)
    assert not idx.cas_update(k(1), Location.log(99), Location.log(20))
    assert idx.get(k(1)) == Location.log(10)
    assert idx.cas_update(k(1), Location.log(10), Location.cache(0, 3))
    e = idx.peek(k(1))
    assert e.loc == Location.cache(0, 3) and e.chain_len == 2 and e.head == 5
    with pytest.raises(KeyAbsent):
        idx.cas_update(k(2), Location.log(1), Location.log(2))


def test_cas_entry_is_by_identity():
    idx = GlobalIndex()
    idx.insert(k(1), Location.log(10))
    cur = idx.peek(k(1))
    twin = IndexEntry(cur.key, cur.loc, cur.chain_len, cur.head)
    assert twin == cur
    assert not idx.cas_entry(twin, IndexEntry(k(1), Location.log(20)))
    assert idx.cas_entry(cur, IndexEntry(k(1), Location.log(20)))
    assert not idx.remove_entry(cur)


def test_range_iter_examples():
    idx = GlobalIndex()
    for n in (1, 3, 5):
        idx.insert(k(n), Location.log(n))
    assert [key for key, _ in idx.range_iter(k(2), 2)] == [k(3), k(5)]
    assert idx.range_iter(k(2), 0) == []
    assert idx.range_iter(k(6), 5) == []


def test_probes_count_lookups_only():
    idx = GlobalIndex()
    idx.insert(k(1), Location.log(1))
    idx.lookup(k(1))
    idx.get(k(2))
    idx.peek(k(1))
    assert idx.probes == 2


@given(st.sets(st.tuples(st.integers(1, 3), st.binary(max_size=4)), max_size=60),
       st.tuples(st.integers(0, 4), st.binary(max_size=4)), st.integers(0, 70))
def test_range_matches_sorted_oracle(keys, start, limit):
    idx = GlobalIndex()
    for sid, pk in keys:
        idx.insert(HierKey(sid, pk), Location.log(0))
    start_key = HierKey(*start)
    tail = sorted(key for key in (HierKey(*t) for t in keys) if key >= start_key)
    assert [key for key, _ in idx.range_iter(start_key, limit)] == tail[:limit]
    assert [e.key for e in idx.seek(start_key)] == tail


def test_seek_tolerates_concurrent_removal():
    idx = GlobalIndex()
    for n in range(200):
        idx.insert(k(n), Location.log(n))
    seen = []
    for e in idx.seek(k(0)):
        seen.append(e.key)
        if len(seen) == 10:
            for n in range(10, 150):
                idx.remove(k(n))
    assert seen[:10] == [k(n) for n in range(10)]
    assert seen[10:] == [k(n) for n in range(150, 200)]


def test_racing_cas_one_winner_per_generation():
    idx = GlobalIndex()
    idx.insert(k(0), Location.log(0))
    wins = [0] * 8
    generations = 2000

    def racer(t):
        while True:
            cur = idx.peek(k(0))
            gen = cur.loc.log_addr
            if gen >= generations:
                return
            if idx.cas_update(k(0), Location.log(gen), Location.log(gen + 1)):
                wins[t] += 1

    threads = [threading.Thread(target=racer, args=(t,)) for t in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sum(wins) == generations
    assert idx.get(k(0)) == Location.log(generations)
