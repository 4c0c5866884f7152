"""Ordered in-memory index from keys to the current location of their rows."""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass
from itertools import islice
from typing import Optional

from sortedcontainers import SortedList

from focus.errors import KeyAbsent
from focus.schema import HierKey

_STRIPES = 64


class LocTag(enum.IntEnum):
    LOG = 0
    CACHE = 1


@dataclass(frozen=True)
class Location:
    tag: LocTag
    log_addr: Optional[int] = None
    page: Optional[int] = None
    slot: Optional[int] = None

    @classmethod
    def log(cls, addr: int) -> "Location":
        return cls(LocTag.LOG, log_addr=addr)

    @classmethod
    def cache(cls, page: int, slot: int) -> "Location":
        return cls(LocTag.CACHE, page=page, slot=slot)

    @property
    def is_cache(self) -> bool:
        return self.tag == LocTag.CACHE


@dataclass(frozen=True)
class IndexEntry:
    """Immutable snapshot of a key's state; replaced wholesale on every publish.

    ``head`` is the address of the complete row anchoring the chain and
    ``chain_len`` the number of delta rows stacked on it.
    """

    key: HierKey
    loc: Location
    chain_len: int = 0
    head: Optional[int] = None


class GlobalIndex:
    def __init__(self) -> None:
        self._entries: dict[HierKey, IndexEntry] = {}
        self._order = SortedList()
        self._structure = threading.Lock()
        self._stripes = [threading.Lock() for _ in range(_STRIPES)]
        self.probes = 0

    def _stripe(self, key: HierKey) -> threading.Lock:
        return self._stripes[hash(key) % _STRIPES]

    def lookup(self, key: HierKey) -> Optional[IndexEntry]:
        self.probes += 1
        return self._entries.get(key)

    def peek(self, key: HierKey) -> Optional[IndexEntry]:
        """Lookup for maintenance paths; not counted as a probe."""
        return self._entries.get(key)

    def get(self, key: HierKey) -> Optional[Location]:
        entry = self.lookup(key)
        return None if entry is None else entry.loc

    def insert(self, key: HierKey, loc: Location, *, chain_len: int = 0, head: Optional[int] = None) -> bool:
        with self._structure, self._stripe(key):
            if key in self._entries:
                return False
            self._entries[key] = IndexEntry(key, loc, chain_len, head)
            self._order.add(key)
            return True

    def remove(self, key: HierKey, expected: Optional[Location] = None) -> bool:
        """Drop ``key``; with ``expected`` set, only if it still points there."""
        with self._structure, self._stripe(key):
            entry = self._entries.get(key)
            if entry is None or (expected is not None and entry.loc != expected):
                return False
            del self._entries[key]
            self._order.remove(key)
            return True

    def remove_entry(self, entry: IndexEntry) -> bool:
        """Drop the key only if its current entry is still ``entry`` (identity)."""
        with self._structure, self._stripe(entry.key):
            if self._entries.get(entry.key) is not entry:
                return False
            del self._entries[entry.key]
            self._order.remove(entry.key)
            return True

    def cas_update(self, key: HierKey, expected: Location, new: Location, *,
                   chain_len: Optional[int] = None, head: Optional[int] = None) -> bool:
        with self._stripe(key):
            cur = self._entries.get(key)
            if cur is None:
                raise KeyAbsent(key)
            if cur.loc != expected:
                return False
            self._entries[key] = IndexEntry(
                key, new,
                cur.chain_len if chain_len is None else chain_len,
                cur.head if head is None else head,
            )
            return True

    def cas_entry(self, expected: IndexEntry, new: IndexEntry) -> bool:
        """Swap a whole entry if the current one is still ``expected`` (identity)."""
        with self._stripe(expected.key):
            cur = self._entries.get(expected.key)
            if cur is None:
                raise KeyAbsent(expected.key)
            if cur is not expected:
                return False
            self._entries[expected.key] = new
            return True

    def range_iter(self, start_key: HierKey, limit: int) -> list[tuple[HierKey, Location]]:
        return [(e.key, e.loc) for e in self.range_entries(start_key, limit)]

    def range_entries(self, start_key: HierKey, limit: int) -> list[IndexEntry]:
        if limit <= 0:
            return []
        with self._structure:
            keys = list(islice(self._order.irange(minimum=start_key), limit))
        out = []
        for k in keys:
            e = self._entries.get(k)
            if e is not None:
                out.append(e)
        return out

    def seek(self, start_key: HierKey):
        """Iterator of entries from ``start_key`` onward, fetched lazily in batches."""
        cursor = start_key
        inclusive = True
        while True:
            with self._structure:
                keys = list(islice(self._order.irange(minimum=cursor, inclusive=(inclusive, True)), 64))
            if not keys:
                return
            for k in keys:
                e = self._entries.get(k)
                if e is not None:
                    yield e
            cursor, inclusive = keys[-1], False

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: HierKey) -> bool:
        return key in self._entries

    def keys(self) -> list[HierKey]:
        with self._structure:
            return list(self._order)
