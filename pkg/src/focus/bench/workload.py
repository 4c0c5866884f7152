"""Deterministic YCSB-style and microbenchmark operation streams."""

from __future__ import annotations

import bisect
import enum
import itertools
import math
import random
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from focus.errors import InvalidMix


class OpKind(enum.Enum):
    READ = "read"          # full row
    READ_P = "read_p"      # partial_field_count fields
    UPDATE = "update"      # one field
    INSERT = "insert"      # new full row
    SCAN = "scan"          # scan_width full rows
    SCAN_P = "scan_p"      # scan_width rows, partial fields
    RMW = "rmw"            # full read then one-field update


@dataclass(frozen=True)
class Op:
    kind: OpKind
    key: int
    fields: tuple[int, ...] = ()
    seq: int = 0


@dataclass
class WorkloadSpec:
    name: str
    mix: dict = field(default_factory=dict)  # OpKind -> fraction
    record_count: int = 100_000
    op_count: int = 1_000_000
    field_count: int = 10
    field_size: int = 100
    distribution: str = "zipfian"  # zipfian, uniform or latest
    theta: float = 0.99
    scan_width: int = 100
    partial_field_count: int = 1
    hotspot_shift_at: Optional[int] = None

    def validate(self) -> None:
        total = sum(self.mix.values())
        if not self.mix or abs(total - 1.0) > 1e-9 or any(p < 0 for p in self.mix.values()):
            raise InvalidMix(f"{self.name}: op mix sums to {total}")
        if self.distribution not in ("zipfian", "uniform", "latest"):
            raise InvalidMix(f"unknown distribution {self.distribution!r}")
        if not 1 <= self.partial_field_count <= self.field_count:
            raise InvalidMix("partial_field_count outside [1, field_count]")


YCSB_MIXES = {
    "A": {OpKind.UPDATE: 0.5, OpKind.READ: 0.5},
    "B": {OpKind.UPDATE: 0.05, OpKind.READ: 0.95},
    "C": {OpKind.READ: 1.0},
    "D": {OpKind.INSERT: 0.05, OpKind.READ: 0.95},
    "E": {OpKind.INSERT: 0.05, OpKind.SCAN: 0.95},
    "F": {OpKind.RMW: 0.5, OpKind.READ: 0.5},
}

MICRO_OPS = {
    "insert": OpKind.INSERT,
    "read-f": OpKind.READ,
    "read-p": OpKind.READ_P,
    "update": OpKind.UPDATE,
    "scan-f": OpKind.SCAN,
    "scan-p": OpKind.SCAN_P,
}


def workload_spec(name: str, **overrides) -> WorkloadSpec:
    """Spec for ``A``..``F`` or ``micro:<op>`` (ops: insert, read-f, read-p, update, scan-f, scan-p)."""
    if name.upper() in YCSB_MIXES:
        mix = dict(YCSB_MIXES[name.upper()])
        overrides.setdefault("distribution", "latest" if name.upper() == "D" else "zipfian")
        spec = WorkloadSpec(name.upper(), mix, **overrides)
    elif name.lower().startswith("micro:") and name.lower()[6:] in MICRO_OPS:
        spec = WorkloadSpec(name.lower(), {MICRO_OPS[name.lower()[6:]]: 1.0}, **overrides)
    else:
        raise InvalidMix(f"unknown workload {name!r}")
    spec.validate()
    return spec


def zeta(n: int, theta: float) -> float:
    return float(np.sum(np.arange(1, n + 1, dtype=np.float64) ** -theta))


class ZipfianGenerator:
    """Gray et al. rejection-free Zipfian over ranks ``0..n-1`` (rank 0 hottest)."""

    def __init__(self, n: int, theta: float, rng: random.Random) -> None:
        if n < 1:
            raise ValueError("zipfian needs n >= 1")
        self.n = n
        self.theta = theta
        self.rng = rng
        self.zetan = zeta(n, theta)
        self.alpha = 1.0 / (1.0 - theta)
        zeta2 = zeta(min(n, 2), theta)
        self.eta = (1 - (2.0 / n) ** (1 - theta)) / (1 - zeta2 / self.zetan) if n > 2 else 0.0

    def next(self) -> int:
        u = self.rng.random()
        uz = u * self.zetan
        if uz < 1.0:
            return 0
        if uz < 1.0 + 0.5 ** self.theta:
            return min(1, self.n - 1)
        return min(self.n - 1, int(self.n * (self.eta * u - self.eta + 1) ** self.alpha))


def rank_mass(n: int, theta: float, rank: int = 0) -> float:
    """Analytic probability of ``rank`` under Zipf(theta) over ``n`` items."""
    return (rank + 1) ** -theta / zeta(n, theta)


class KeyChooser:
    def __init__(self, spec: WorkloadSpec, rng: random.Random, seed: int) -> None:
        self.spec = spec
        self.rng = rng
        self.zipf = None
        if spec.distribution in ("zipfian", "latest"):
            self.zipf = ZipfianGenerator(spec.record_count, spec.theta, rng)
        self.scramble(seed)

    def scramble(self, seed: int) -> None:
        # hot ranks land on arbitrary keys; a new seed moves the hotspot
        perm = list(range(self.spec.record_count))
        random.Random(seed).shuffle(perm)
        self.perm = perm

    def choose(self, inserted: int) -> int:
        spec = self.spec
        if spec.distribution == "uniform":
            return self.rng.randrange(spec.record_count + inserted)
        if spec.distribution == "latest":
            newest = spec.record_count + inserted - 1
            rank = self.zipf.next()
            return max(0, newest - rank)
        return self.perm[self.zipf.next()]


def generate(spec: WorkloadSpec, seed: int) -> Iterator[Op]:
    """Reproducible op stream; inserts take fresh key ids after the preloaded range."""
    spec.validate()
    rng = random.Random(seed)
    chooser = KeyChooser(spec, rng, seed)
    kinds = list(spec.mix)
    weights = list(itertools.accumulate(spec.mix[k] for k in kinds))
    inserted = 0
    for seq in range(spec.op_count):
        if spec.hotspot_shift_at is not None and seq == spec.hotspot_shift_at:
            chooser.scramble(seed + 1)
        kind = kinds[min(bisect.bisect_right(weights, rng.random()), len(kinds) - 1)]
        if kind is OpKind.INSERT:
            yield Op(kind, spec.record_count + inserted, (), seq)
            inserted += 1
            continue
        key = chooser.choose(inserted)
        if kind in (OpKind.UPDATE, OpKind.RMW):
            fields: tuple[int, ...] = (rng.randrange(spec.field_count),)
        elif kind in (OpKind.READ_P, OpKind.SCAN_P):
            fields = tuple(sorted(rng.sample(range(spec.field_count), spec.partial_field_count)))
        else:
            fields = ()
        yield Op(kind, key, fields, seq)


def record_key(i: int) -> bytes:
    return b"user%012d" % i


def field_value(key_id: int, field_id: int, version: int, size: int) -> bytes:
    """Deterministic field content; distinct per (key, field, version)."""
    stamp = b"%d:%d:%d|" % (key_id, field_id, version)
    reps = math.ceil(size / len(stamp))
    return (stamp * reps)[:size]
