"""Schema definitions and field-layout queries.

A schema splits its fields into fixed-length fields, stored verbatim in the
row's fixed region, and variable-length fields, which occupy a 12-byte
metadata head in the fixed region. Field ids follow declaration order.
"""

from __future__ import annotations

import enum
import struct
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from focus.errors import (
    DuplicateFieldName,
    DuplicateSchemaName,
    FieldIdOutOfRange,
    UnknownFieldName,
    UnknownSchema,
    ZeroFieldSchema,
    ZeroSizeFixedField,
)

VAR_HEAD_SIZE = 12


class FieldKind(enum.IntEnum):
    FIXED = 0
    VARIABLE = 1


@dataclass(frozen=True)
class FieldDef:
    name: str
    kind: FieldKind = FieldKind.FIXED
    size: int = 0
    # opaque tag copied into the variable-field head, never interpreted
    type_code: int = 0

    @classmethod
    def fixed(cls, name: str, size: int) -> "FieldDef":
        return cls(name, FieldKind.FIXED, size)

    @classmethod
    def variable(cls, name: str, type_code: int = 0) -> "FieldDef":
        return cls(name, FieldKind.VARIABLE, 0, type_code)

    @property
    def is_fixed(self) -> bool:
        return self.kind == FieldKind.FIXED

    @property
    def slot_size(self) -> int:
        return self.size if self.is_fixed else VAR_HEAD_SIZE


@dataclass(frozen=True)
class SchemaDef:
    schema_id: int
    name: str
    version: int
    fields: tuple[FieldDef, ...]
    fixed_offsets: tuple[int, ...]
    fixed_region_size: int
    _ids: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        self._ids.update({f.name: i for i, f in enumerate(self.fields)})

    @property
    def field_count(self) -> int:
        return len(self.fields)

    def field_id(self, name: str) -> int:
        try:
            return self._ids[name]
        except KeyError:
            raise UnknownFieldName(name) from None

    @property
    def field_names(self) -> list[str]:
        return [f.name for f in self.fields]

    @property
    def variable_ids(self) -> tuple[int, ...]:
        return tuple(i for i, f in enumerate(self.fields) if not f.is_fixed)


@dataclass(frozen=True, order=True)
class HierKey:
    """Key of a hierarchical KV pair; orders by schema, then primary key bytes."""

    schema_id: int
    primary_key: bytes

    def encode(self) -> bytes:
        return struct.pack("<I", self.schema_id) + self.primary_key

    @classmethod
    def decode(cls, raw: bytes) -> "HierKey":
        (sid,) = struct.unpack_from("<I", raw)
        return cls(sid, bytes(raw[4:]))


def compute_offsets(fields: Iterable[FieldDef]) -> tuple[tuple[int, ...], int]:
    offsets = []
    pos = 0
    for f in fields:
        offsets.append(pos)
        pos += f.slot_size
    return tuple(offsets), pos


def build_schema(schema_id: int, name: str, fields: list[FieldDef], version: int = 1) -> SchemaDef:
    if not fields:
        raise ZeroFieldSchema(name)
    seen = set()
    for f in fields:
        if not f.name:
            raise ValueError("field name must be nonempty")
        if f.name in seen:
            raise DuplicateFieldName(f.name)
        seen.add(f.name)
        if f.is_fixed and f.size < 1:
            raise ZeroSizeFixedField(f.name)
    offsets, total = compute_offsets(fields)
    return SchemaDef(schema_id, name, version, tuple(fields), offsets, total)


def resolve_fields(schema: SchemaDef, names: Iterable[str]) -> frozenset[int]:
    """Map field names to ids. An empty selection means every field."""
    names = list(names)
    if not names:
        return frozenset(range(schema.field_count))
    return frozenset(schema.field_id(n) for n in names)


def field_slice(schema: SchemaDef, field_id: int) -> tuple[int, int, FieldKind]:
    if not 0 <= field_id < schema.field_count:
        raise FieldIdOutOfRange(field_id)
    f = schema.fields[field_id]
    return schema.fixed_offsets[field_id], f.slot_size, f.kind


# persistence record: [u32 id][u32 version][u16 len][name][u16 count]
# then per field [u16 len][name][u8 kind][u32 size]
def encode_schema_record(schema: SchemaDef) -> bytes:
    name = schema.name.encode()
    out = [struct.pack("<IIH", schema.schema_id, schema.version, len(name)), name]
    out.append(struct.pack("<H", schema.field_count))
    for f in schema.fields:
        fname = f.name.encode()
        out.append(struct.pack("<H", len(fname)))
        out.append(fname)
        # type_code rides in the high bits of the size word for variable fields
        size = f.size if f.is_fixed else f.type_code
        out.append(struct.pack("<BI", int(f.kind), size))
    return b"".join(out)


def decode_schema_record(raw: bytes, pos: int = 0) -> tuple[SchemaDef, int]:
    sid, version, nlen = struct.unpack_from("<IIH", raw, pos)
    pos += 10
    name = bytes(raw[pos:pos + nlen]).decode()
    pos += nlen
    (count,) = struct.unpack_from("<H", raw, pos)
    pos += 2
    fields = []
    for _ in range(count):
        (flen,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        fname = bytes(raw[pos:pos + flen]).decode()
        pos += flen
        kind, size = struct.unpack_from("<BI", raw, pos)
        pos += 5
        if kind == FieldKind.FIXED:
            fields.append(FieldDef(fname, FieldKind.FIXED, size))
        else:
            fields.append(FieldDef(fname, FieldKind.VARIABLE, 0, size))
    return build_schema(sid, name, fields, version), pos


class SchemaRegistry:
    """Read-mostly schema catalogue.

    ``persist`` is called with the encoded record of every new schema while the
    writer lock is held, so the on-log order matches id order.
    """

    def __init__(self, persist: Optional[Callable[[bytes], None]] = None) -> None:
        self._lock = threading.Lock()
        self._by_id: dict[int, SchemaDef] = {}
        self._by_name: dict[str, SchemaDef] = {}
        self._next_id = 1
        self._persist = persist

    def create_schema(self, name: str, fields: list[FieldDef]) -> SchemaDef:
        with self._lock:
            if name in self._by_name:
                raise DuplicateSchemaName(name)
            schema = build_schema(self._next_id, name, list(fields))
            if self._persist is not None:
                self._persist(encode_schema_record(schema))
            self._install(schema)
            return schema

    def _install(self, schema: SchemaDef) -> None:
        # readers see the dicts swapped wholesale, never a half-updated one
        by_id = dict(self._by_id)
        by_name = dict(self._by_name)
        by_id[schema.schema_id] = schema
        by_name[schema.name] = schema
        self._by_id, self._by_name = by_id, by_name
        self._next_id = max(self._next_id, schema.schema_id + 1)

    def load(self, schema: SchemaDef) -> None:
        """Install a schema recovered from the log."""
        with self._lock:
            self._install(schema)

    def get(self, schema_id: int) -> SchemaDef:
        try:
            return self._by_id[schema_id]
        except KeyError:
            raise UnknownSchema(schema_id) from None

    def by_name(self, name: str) -> SchemaDef:
        try:
            return self._by_name[name]
        except KeyError:
            raise UnknownSchema(name) from None

    def __contains__(self, schema_id: int) -> bool:
        return schema_id in self._by_id

    def __iter__(self):
        return iter(list(self._by_id.values()))

    def __len__(self) -> int:
        return len(self._by_id)
