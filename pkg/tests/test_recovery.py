"""Crash at every persistence event of a scripted run and check the recovered store.

Oracle: a shadow dict updated only after an op returns. After a crash during op j,
every key must match the shadow exactly except op j's key, which may show either
its before or after value.
"""
import random

import pytest

from focus import Focus
from focus.errors import KeyAbsent, SimulatedCrash

from conftest import MIXED, small_config


def config(cache):
    return small_config(cache=cache, clog=16 << 10, dlog=8 << 10, region_bytes=2 << 20)


def script(seed, n=70):
    rng = random.Random(seed)
    live = set()
    ops = []
    for i in range(n):
        pk = b"k%d" % rng.randrange(8)
        r = rng.random()
        if pk not in live or r < 0.2:
            ops.append(("put", pk, {"id": b"%08d" % i, "age": b"%04d" % i, "name": b"n" * rng.randrange(30),
                                    "score": b"%08d" % (i * 7), "bio": b"b" * rng.randrange(120)}))
            live.add(pk)
        elif r < 0.6:
            ops.append(("update", pk, {"score": b"U%07d" % i}))
        elif r < 0.75:
            ops.append(("update", pk, {"name": b"v%d" % i, "age": b"%04d" % (i % 10)}))
        elif r < 0.85:
            ops.append(("delete", pk, None))
            live.discard(pk)
        else:
            ops.append(("maint", pk, None))
    return ops


def apply(db, model, op):
    kind, pk, vals = op
    k = db.key("p", pk)
    if kind == "put":
        db.put(k, vals)
        model[pk] = dict(vals)
    elif kind == "update":
        db.update(k, vals)
        model[pk] = {**model[pk], **vals}
    elif kind == "delete":
        db.delete(k)
        model.pop(pk, None)
    else:
        db.run_maintenance()
        db.collect_garbage()


def read_all(db):
    out = {}
    for i in range(8):
        pk = b"k%d" % i
        try:
            out[pk] = db.get(db.key("p", pk))
        except KeyAbsent:
            pass
    return out


def count_events(ops, cache):
    db = Focus(config(cache))
    db.create_schema("p", MIXED)
    db.region.crash_after(10**9)
    start = db.region._events
    model = {}
    for op in ops:
        apply(db, model, op)
    total = db.region._events - start
    db.region.crash_after(None)
    assert read_all(db) == model
    db.close()
    return total


@pytest.mark.parametrize("cache", [False, True], ids=["log", "cached"])
@pytest.mark.parametrize("seed", [1, 2])
def test_every_crash_point_recovers_acknowledged_ops(seed, cache):
    ops = script(seed)
    total = count_events(ops, cache)
    step = max(1, total // 250)
    for crash_at in range(1, total + 1, step):
        db = Focus(config(cache))
        db.create_schema("p", MIXED)
        db.region.crash_after(crash_at)
        model = {}
        inflight = None
        for op in ops:
            before = dict(model)
            try:
                apply(db, model, op)
            except SimulatedCrash:
                inflight = (op, before)
                break
        assert inflight is not None
        op, before = inflight
        again = Focus.open(db.region.simulate_crash(), config(cache))
        got = read_all(again)
        pk = op[1]
        after = dict(before)
        try:
            apply(_Shadow(), after, op)
        except KeyError:
            pass
        for key in set(got) | set(before) | set(after):
            if key == pk and op[0] != "maint":
                assert got.get(key) in (before.get(key), after.get(key)), (crash_at, op)
            else:
                assert got.get(key) == before.get(key), (crash_at, key, op)
        # the recovered store keeps working and survives another clean restart
        again.put(again.key("p", b"new"), ops[0][2])
        third = Focus.open(again.region.simulate_crash(), config(cache))
        assert third.get(third.key("p", b"new")) == ops[0][2]
        assert {k: v for k, v in read_all(third).items()} == {**got}
        third.close()
        again.close()


class _Shadow:
    """Stand-in store so ``apply`` can compute the after-state on the model only."""

    def key(self, _schema, pk):
        return pk

    def put(self, *_):
        pass

    def update(self, *_):
        pass

    def delete(self, *_):
        pass

    def run_maintenance(self):
        pass

    def collect_garbage(self):
        pass
