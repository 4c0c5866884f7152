"""``bench`` command: run a workload against one engine and append CSV rows."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from typing import Optional, Sequence

from focus.bench.runner import TARGETS, ReportRow, make_target, preload, run
from focus.bench.workload import workload_spec
from focus.config import EngineConfig


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bench", description="YCSB / microbenchmark harness for the FOCUS store")
    p.add_argument("--engine", choices=sorted(TARGETS), default="focus")
    p.add_argument("--workload", default="A", help="A..F or micro:<insert|read-f|read-p|update|scan-f|scan-p>")
    p.add_argument("--records", type=int, default=100_000)
    p.add_argument("--ops", type=int, default=1_000_000)
    p.add_argument("--threads", default="1", help="thread count, or a comma list such as 1,2,4,8")
    p.add_argument("--zipf", type=float, default=0.99)
    p.add_argument("--distribution", choices=("zipfian", "uniform", "latest"), default=None)
    p.add_argument("--fields", type=int, default=10)
    p.add_argument("--field-size", type=int, default=100)
    p.add_argument("--scan-width", type=int, default=100)
    p.add_argument("--partial-fields", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="CSV file to append to (header written when new)")
    p.add_argument("--config", default=None, help="key = value engine config file")
    p.add_argument("--restore-threshold", type=int, default=None)
    p.add_argument("--no-cache", action="store_true")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def load_config(args: argparse.Namespace) -> EngineConfig:
    cfg = EngineConfig.load(args.config) if args.config else EngineConfig(track_durability=False)
    if args.restore_threshold is not None:
        cfg.restore_threshold = args.restore_threshold
    if args.no_cache:
        cfg.cache_enabled = False
    # leave headroom for the log: records plus a generous delta/rewrite margin
    row = args.fields * (args.field_size + 12) + 64
    cfg.region_bytes = max(cfg.region_bytes, 4 * row * (args.records + args.ops // 10) + (64 << 20))
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    overrides = dict(record_count=args.records, op_count=args.ops, field_count=args.fields,
                     field_size=args.field_size, theta=args.zipf, scan_width=args.scan_width,
                     partial_field_count=args.partial_fields)
    if args.distribution:
        overrides["distribution"] = args.distribution
    spec = workload_spec(args.workload, **overrides)
    thread_counts = [int(t) for t in str(args.threads).split(",")]

    rows: list[ReportRow] = []
    for threads in thread_counts:
        target = make_target(args.engine, spec, load_config(args))
        try:
            preload(target)
            rows.append(run(target, threads, args.seed))
        finally:
            target.close()

    writer = csv.writer(sys.stdout)
    writer.writerow(ReportRow.header())
    for r in rows:
        writer.writerow(r.values())
    if args.out:
        fresh = not os.path.exists(args.out) or os.path.getsize(args.out) == 0
        with open(args.out, "a", newline="") as fh:
            w = csv.writer(fh)
            if fresh:
                w.writerow(ReportRow.header())
            for r in rows:
                w.writerow(r.values())
    return 0


if __name__ == "__main__":
    sys.exit(main())
