"""Schema-aware log-structured key-value store for byte-addressable persistent memory."""

from focus.api import AccessStats, ConsolidatedAdapter, Focus, ScatteredAdapter
from focus.config import EngineConfig
from focus.index import GlobalIndex, IndexEntry, Location
from focus.plog import LogConfig, PersistentLog
from focus.pmem import FlushStats, PmemRegion
from focus.schema import FieldDef, HierKey, SchemaDef, SchemaRegistry
from focus.seacache import CacheConfig, SeaCache
from focus.swim import MergeItem, MergeOutcome, SwimEngine, cacheline_flush

__all__ = [
    "AccessStats", "CacheConfig", "ConsolidatedAdapter", "EngineConfig", "FieldDef", "FlushStats", "Focus",
    "GlobalIndex", "HierKey", "IndexEntry", "Location", "LogConfig", "MergeItem", "MergeOutcome",
    "PersistentLog", "PmemRegion", "ScatteredAdapter", "SchemaDef", "SchemaRegistry", "SeaCache",
    "SwimEngine", "cacheline_flush",
]
