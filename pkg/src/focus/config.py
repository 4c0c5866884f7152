"""Engine configuration and the flat ``key = value`` config file format."""

from __future__ import annotations

import ast
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

from focus.plog import LogConfig
from focus.seacache import CacheConfig

# file keys that map onto the nested cache / log configs
_CACHE_KEYS = {
    "cache_capacity_bytes": "capacity_bytes",
    "cache_page_size": "page_size",
    "hit_threshold": "hit_threshold",
    "page_usage_target": "page_usage_target",
    "evict_trigger": "evict_trigger",
    "rw_table": "rw_table",
    "ema_alpha": "ema_alpha",
    "task_queue_len": "task_queue_len",
    "var_area_quota": "var_area_quota",
    "cache_mode": "mode",
    "cache_seed": "seed",
}
_LOG_KEYS = {
    "clog_size": "clog_size",
    "dlog_size": "dlog_size",
    "schema_region_size": "schema_region_size",
    "gc_live_threshold": "gc_live_threshold",
    "gc_utilization_threshold": "gc_utilization_threshold",
}


@dataclass
class EngineConfig:
    region_bytes: int = 256 << 20
    path: Optional[str] = None
    track_durability: bool = True
    read_latency_ns: int = 0
    write_latency_ns: int = 0
    restore_threshold: int = 5
    merge_queue_depth: int = 4096
    merge_batch: int = 64
    background_merge: bool = True
    cache_enabled: bool = True
    log: LogConfig = field(default_factory=LogConfig)
    cache: CacheConfig = field(default_factory=CacheConfig)

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "EngineConfig":
        cfg = cls()
        top = {f.name for f in dataclasses.fields(cls)} - {"log", "cache"}
        for key, value in values.items():
            if key in _CACHE_KEYS:
                setattr(cfg.cache, _CACHE_KEYS[key], value)
            elif key in _LOG_KEYS:
                setattr(cfg.log, _LOG_KEYS[key], value)
            elif key in top:
                setattr(cfg, key, value)
            else:
                raise ValueError(f"unknown config key {key!r}")
        if isinstance(cfg.cache.rw_table, list):
            cfg.cache.rw_table = tuple(tuple(band) for band in cfg.cache.rw_table)
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "EngineConfig":
        return cls.from_mapping(parse_keyfile(Path(path).read_text()))


def _parse_value(text: str) -> Any:
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text.strip("\"'")


def parse_keyfile(text: str) -> dict[str, Any]:
    """Parse ``key = value`` lines. ``#`` starts a comment; values are Python/TOML-ish literals.

    >>> parse_keyfile("restore_threshold = 5  # default\\ncache_enabled = false")
    {'restore_threshold': 5, 'cache_enabled': False}
    """
    out: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = _parse_value(value)
    return out
