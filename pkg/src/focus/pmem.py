"""Memory-mapped region standing in for byte-addressable persistent memory.

Stores become durable only once their cachelines have been flushed and a
fence has been issued. The region keeps a durable twin alongside the live
mapping so that :meth:`PmemRegion.simulate_crash` can reproduce exactly what
would survive a power failure at 64-byte granularity.
"""

from __future__ import annotations

import mmap
import os
import threading
import time
from dataclasses import asdict, dataclass
from typing import Optional

from focus.errors import OutOfRange, SimulatedCrash, UnalignedFlush

CACHELINE = 64
NVM_BLOCK = 256


@dataclass
class FlushStats:
    cacheline_flushes: int = 0
    fences: int = 0
    bytes_written: int = 0
    bytes_read: int = 0
    reads_256b_rounded: int = 0

    def as_dict(self) -> dict:
        return asdict(self)

    def csv_row(self) -> dict:
        return {
            "flushes": self.cacheline_flushes,
            "fences": self.fences,
            "bytes_read": self.bytes_read,
            "bytes_written": self.bytes_written,
            "reads_256B_rounded": self.reads_256b_rounded,
        }


class _Tally(threading.local):
    read = 0
    written = 0


class PmemRegion:
    def __init__(
        self,
        capacity: int,
        path: Optional[str] = None,
        *,
        track_durability: bool = True,
        read_latency_ns: int = 0,
        write_latency_ns: int = 0,
        _image: Optional[bytes] = None,
    ) -> None:
        if capacity <= 0 or capacity % CACHELINE:
            raise ValueError("capacity must be a positive multiple of 64")
        self.capacity = capacity
        self.path = path
        self._fd = -1
        if path is not None:
            self._fd = os.open(path, os.O_RDWR | os.O_CREAT, 0o644)
            if os.fstat(self._fd).st_size < capacity:
                os.ftruncate(self._fd, capacity)
            self.live = mmap.mmap(self._fd, capacity)
        else:
            self.live = mmap.mmap(-1, capacity)
        if _image is not None:
            self.live[:len(_image)] = _image
        self.track_durability = track_durability
        self.durable: Optional[mmap.mmap] = None
        if track_durability:
            self.durable = mmap.mmap(-1, capacity)
            # whatever is already in the mapping is treated as durable
            if path is not None or _image is not None:
                self.durable[:] = self.live[:]
        self.read_latency_ns = read_latency_ns
        self.write_latency_ns = write_latency_ns
        self.stats = FlushStats()
        self._lock = threading.Lock()
        self._pending: list[tuple[int, int]] = []
        self._tally = _Tally()
        self._events = 0
        self._crash_at: Optional[int] = None
        self.crash_image: Optional[bytes] = None

    # -- crash scheduling -------------------------------------------------
    def crash_after(self, events: Optional[int]) -> None:
        """Raise :class:`SimulatedCrash` on the ``events``-th write/flush/fence from now."""
        self._crash_at = None if events is None else self._events + events
        self.crash_image = None

    def _tick(self) -> None:
        if self._crash_at is None:
            return
        self._events += 1
        if self._events >= self._crash_at:
            if self.crash_image is None:
                self.crash_image = self.durable_image()
            raise SimulatedCrash(self._events)

    # -- data path ---------------------------------------------------------
    def _check(self, addr: int, n: int) -> None:
        if addr < 0 or n < 0 or addr + n > self.capacity:
            raise OutOfRange(f"[{addr}, {addr + n}) outside region of {self.capacity} bytes")

    def write_at(self, addr: int, data: bytes) -> None:
        n = len(data)
        self._check(addr, n)
        self._tick()
        self.live[addr:addr + n] = data
        with self._lock:
            self.stats.bytes_written += n
        self._tally.written += n
        if self.write_latency_ns:
            time.sleep(self.write_latency_ns / 1e9)

    def read(self, addr: int, n: int) -> bytes:
        self._check(addr, n)
        data = self.live[addr:addr + n]
        blocks = (addr + n + NVM_BLOCK - 1) // NVM_BLOCK - addr // NVM_BLOCK if n else 0
        with self._lock:
            self.stats.bytes_read += n
            self.stats.reads_256b_rounded += blocks * NVM_BLOCK
        self._tally.read += n
        if self.read_latency_ns:
            time.sleep(self.read_latency_ns / 1e9)
        return data

    def flush(self, line_addr: int) -> None:
        if line_addr % CACHELINE:
            raise UnalignedFlush(line_addr)
        self._check(line_addr, CACHELINE)
        self._tick()
        line = line_addr // CACHELINE
        with self._lock:
            self.stats.cacheline_flushes += 1
            if self.track_durability:
                self._pending.append((line, line + 1))

    def flush_range(self, addr: int, n: int) -> int:
        """Flush every line overlapping ``[addr, addr+n)``; returns the line count."""
        if n <= 0:
            return 0
        self._check(addr, n)
        self._tick()
        lo = addr // CACHELINE
        hi = (addr + n + CACHELINE - 1) // CACHELINE
        with self._lock:
            self.stats.cacheline_flushes += hi - lo
            if self.track_durability:
                self._pending.append((lo, hi))
        return hi - lo

    def fence(self) -> None:
        self._tick()
        with self._lock:
            self.stats.fences += 1
            if not self._pending:
                return
            spans = sorted(self._pending)
            self._pending = []
            merged = [list(spans[0])]
            for lo, hi in spans[1:]:
                if lo <= merged[-1][1]:
                    merged[-1][1] = max(merged[-1][1], hi)
                else:
                    merged.append([lo, hi])
            for lo, hi in merged:
                a, b = lo * CACHELINE, hi * CACHELINE
                self.durable[a:b] = self.live[a:b]

    def persist(self, addr: int, data: bytes) -> None:
        """Write, flush the touched lines and fence."""
        self.write_at(addr, data)
        self.flush_range(addr, len(data))
        self.fence()

    # -- inspection --------------------------------------------------------
    def tally(self) -> tuple[int, int]:
        """Bytes (read, written) by the calling thread so far."""
        return self._tally.read, self._tally.written

    def snapshot_stats(self) -> FlushStats:
        with self._lock:
            return FlushStats(**asdict(self.stats))

    def durable_image(self) -> bytes:
        if self.durable is None:
            raise RuntimeError("durability tracking is disabled for this region")
        with self._lock:
            return bytes(self.durable[:])

    def simulate_crash(self) -> "PmemRegion":
        """Region holding only what was flushed and fenced."""
        image = self.crash_image if self.crash_image is not None else self.durable_image()
        return PmemRegion.from_image(image, read_latency_ns=self.read_latency_ns,
                                     write_latency_ns=self.write_latency_ns)

    @classmethod
    def from_image(cls, image: bytes, **kwargs) -> "PmemRegion":
        return cls(len(image), _image=image, **kwargs)

    def close(self) -> None:
        if self.path is not None:
            self.live.flush()
        self.live.close()
        if self.durable is not None:
            self.durable.close()
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1
