from __future__ import annotations

import pytest

from focus import EngineConfig, FieldDef, Focus, LogConfig


def small_config(*, cache: bool = False, region_bytes: int = 4 << 20, clog: int = 64 << 10,
                 dlog: int = 32 << 10, **overrides) -> EngineConfig:
    cfg = EngineConfig(
        region_bytes=region_bytes,
        background_merge=False,
        cache_enabled=cache,
        log=LogConfig(clog_size=clog, dlog_size=dlog, schema_region_size=4096),
    )
    cfg.cache.mode = "inline"
    cfg.cache.capacity_bytes = 256 << 10
    cfg.cache.page_size = 4096
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


def ten_fields(size: int = 8) -> list[FieldDef]:
    return [FieldDef.fixed(f"f{i}", size) for i in range(10)]


MIXED = [FieldDef.fixed("id", 8), FieldDef.fixed("age", 4), FieldDef.variable("name"),
         FieldDef.fixed("score", 8), FieldDef.variable("bio", type_code=7)]


@pytest.fixture
def store():
    db = Focus(small_config())
    yield db
    db.close()


@pytest.fixture
def cached_store():
    db = Focus(small_config(cache=True))
    yield db
    db.close()


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for num in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[num])
