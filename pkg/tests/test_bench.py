import collections
import csv
import io
import random

import pytest

from focus.bench.cli import main
from focus.bench.runner import LatencyHistogram, ReportRow, bench_config, make_target, preload, run
from focus.bench.workload import (
    OpKind,
    ZipfianGenerator,
    generate,
    rank_mass,
    workload_spec,
)
from focus.errors import InvalidMix

CSV_HEADER = ["engine", "workload", "threads", "ops_per_s", "p50_us", "p99_us", "bytes_read",
              "bytes_written", "flushes", "fences", "hit_ratio", "suboperations"]


def test_workload_a_mix():
    spec = workload_spec("A", record_count=1000, op_count=100_000)
    counts = collections.Counter(op.kind for op in generate(spec, seed=1))
    assert abs(counts[OpKind.READ] / 100_000 - 0.5) <= 0.005
    assert abs(counts[OpKind.UPDATE] / 100_000 - 0.5) <= 0.005


def test_stream_is_deterministic():
    spec = workload_spec("F", record_count=500, op_count=2000)
    assert list(generate(spec, 7)) == list(generate(spec, 7))
    assert list(generate(spec, 7)) != list(generate(spec, 8))


def test_zipf_top_rank_mass():
    n, theta, draws = 1000, 0.99, 200_000
    z = ZipfianGenerator(n, theta, random.Random(5))
    top = sum(z.next() == 0 for _ in range(draws)) / draws
    expect = rank_mass(n, theta, 0)
    assert abs(top - expect) <= 0.05 * expect


def test_bad_mixes():
    with pytest.raises(InvalidMix):
        workload_spec("Q")
    spec = workload_spec("A")
    spec.mix[OpKind.READ] = 0.7
    with pytest.raises(InvalidMix):
        spec.validate()
    with pytest.raises(InvalidMix):
        workload_spec("micro:read-p", partial_field_count=11)


def test_insert_workloads_use_fresh_keys():
    spec = workload_spec("D", record_count=100, op_count=2000)
    inserts = [op.key for op in generate(spec, 0) if op.kind is OpKind.INSERT]
    assert inserts == list(range(100, 100 + len(inserts)))


def test_histogram_percentiles():
    h = LatencyHistogram()
    for us in range(1, 101):
        h.record(us * 1000 - 1)
    assert h.percentile(50) == 50 and h.percentile(99) == 99
    h.record(10**12)
    assert h.percentile(100) == 100_000


@pytest.mark.parametrize("engine", ["focus", "consolidated", "scattered"])
def test_run_reports_counters(engine):
    spec = workload_spec("A", record_count=200, op_count=1000, field_size=16)
    target = make_target(engine, spec, bench_config(region_bytes=32 << 20))
    preload(target)
    row = run(target, threads=2, seed=3)
    target.close()
    assert row.engine == engine and row.threads == 2
    assert row.ops_per_s > 0 and row.bytes_read > 0 and row.bytes_written > 0
    assert row.fences > 0 and row.suboperations >= 1000
    assert ReportRow.header() == CSV_HEADER


def test_cli_writes_csv(tmp_path, capsys):
    out = tmp_path / "results.csv"
    argv = ["--engine", "focus", "--workload", "C", "--records", "300", "--ops", "1500",
            "--field-size", "20", "--threads", "1,2", "--out", str(out)]
    assert main(argv) == 0
    assert main(argv[:-4] + ["--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == CSV_HEADER
    assert len(rows) == 1 + 2 + 1  # header once, then appended rows
    assert [r[2] for r in rows[1:]] == ["1", "2", "1"]
    printed = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert printed[0] == CSV_HEADER
    assert float(rows[1][10]) > 0.3  # read-only zipfian warms the cache
