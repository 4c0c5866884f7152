"""Bit-exact row images for the complete-row log and the delta log.

Complete row::

    [u16 kv_size | invalid<<15][u16 key_len][key][fixed region][var region]

Delta row::

    [u16 meta_size][u16 fields_count][u16 x fields_count][u64 chain_pointer][payload]

All integers are little-endian. A variable field is described by a 12-byte
head ``[u16 type][u16 size][8-byte payload]``; the payload holds the content
itself when ``size <= 8`` and otherwise the absolute log address of the
content. Images remember the address they were encoded for (``base``) so
those addresses can be resolved, and :func:`relocate` rewrites them when an
image lands somewhere else.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

from focus.errors import (
    CorruptHeader,
    EmptyFieldSet,
    FieldIdOutOfRange,
    FixedSizeMismatch,
    InvalidRow,
    MissingFieldValue,
    RowTooLarge,
)
from focus.schema import VAR_HEAD_SIZE, HierKey, SchemaDef

NULL_ADDR = (1 << 64) - 1
INLINE_MAX = 8
INVALID_BIT = 0x8000
KV_SIZE_MASK = 0x7FFF
COMPLETE_HEADER = struct.Struct("<HH")
DELTA_PREFIX = struct.Struct("<HH")
VAR_HEAD = struct.Struct("<HH8s")
ADDR = struct.Struct("<Q")


@dataclass(frozen=True)
class CompleteRowImage:
    raw: bytes
    base: int = 0

    @property
    def kv_size(self) -> int:
        return COMPLETE_HEADER.unpack_from(self.raw)[0] & KV_SIZE_MASK

    @property
    def invalid(self) -> bool:
        return bool(COMPLETE_HEADER.unpack_from(self.raw)[0] & INVALID_BIT)

    @property
    def key_len(self) -> int:
        return COMPLETE_HEADER.unpack_from(self.raw)[1]

    @property
    def key(self) -> HierKey:
        return HierKey.decode(self.raw[4:4 + self.key_len])

    @property
    def fixed_start(self) -> int:
        return 4 + self.key_len

    def __len__(self) -> int:
        return len(self.raw)


@dataclass(frozen=True)
class DeltaRowImage:
    raw: bytes
    base: int = 0

    @property
    def meta_size(self) -> int:
        return DELTA_PREFIX.unpack_from(self.raw)[0]

    @property
    def field_ids(self) -> tuple[int, ...]:
        count = DELTA_PREFIX.unpack_from(self.raw)[1]
        return struct.unpack_from(f"<{count}H", self.raw, 4)

    @property
    def chain_pointer(self) -> int:
        return ADDR.unpack_from(self.raw, self.meta_size - 8)[0]

    def __len__(self) -> int:
        return len(self.raw)


RowImage = Union[CompleteRowImage, DeltaRowImage]


def _check_value(schema: SchemaDef, fid: int, value: bytes) -> None:
    f = schema.fields[fid]
    if f.is_fixed:
        if len(value) != f.size:
            raise FixedSizeMismatch(f"{f.name}: expected {f.size} bytes, got {len(value)}")
    elif len(value) > 0xFFFF:
        raise RowTooLarge(f"{f.name}: {len(value)} bytes exceeds u16 size")


def _var_head(type_code: int, value: bytes, content_addr: int) -> bytes:
    if len(value) <= INLINE_MAX:
        return VAR_HEAD.pack(type_code, len(value), value.ljust(INLINE_MAX, b"\0"))
    return VAR_HEAD.pack(type_code, len(value), ADDR.pack(content_addr))


def values_list(schema: SchemaDef, values: Union[Mapping, Sequence[bytes]]) -> list[bytes]:
    """Normalise a name- or id-keyed mapping (or a full sequence) to a list by field id."""
    if isinstance(values, Mapping):
        out: list[Optional[bytes]] = [None] * schema.field_count
        for k, v in values.items():
            fid = schema.field_id(k) if isinstance(k, str) else k
            if not 0 <= fid < schema.field_count:
                raise FieldIdOutOfRange(fid)
            out[fid] = bytes(v)
        for fid, v in enumerate(out):
            if v is None:
                raise MissingFieldValue(schema.fields[fid].name)
        return out  # type: ignore[return-value]
    if len(values) != schema.field_count:
        raise MissingFieldValue(f"expected {schema.field_count} values, got {len(values)}")
    return [bytes(v) for v in values]


def encode_complete(schema: SchemaDef, key: HierKey,
                    values: Union[Mapping, Sequence[bytes]], base: int = 0) -> CompleteRowImage:
    vals = values_list(schema, values)
    key_raw = key.encode()
    fixed_start = 4 + len(key_raw)
    var_pos = fixed_start + schema.fixed_region_size
    fixed_parts = []
    var_parts = []
    for fid, (f, v) in enumerate(zip(schema.fields, vals)):
        _check_value(schema, fid, v)
        if f.is_fixed:
            fixed_parts.append(v)
        else:
            fixed_parts.append(_var_head(f.type_code, v, base + var_pos))
            if len(v) > INLINE_MAX:
                var_parts.append(v)
                var_pos += len(v)
    var_region = b"".join(var_parts)
    kv_size = schema.fixed_region_size + len(var_region)
    if kv_size > KV_SIZE_MASK:
        raise RowTooLarge(f"kv_size {kv_size} exceeds {KV_SIZE_MASK}")
    raw = b"".join([COMPLETE_HEADER.pack(kv_size, len(key_raw)), key_raw, *fixed_parts, var_region])
    return CompleteRowImage(raw, base)


def _read_var(raw: bytes, base: int, head_pos: int) -> bytes:
    _type, size, payload = VAR_HEAD.unpack_from(raw, head_pos)
    if size <= INLINE_MAX:
        return payload[:size]
    (addr,) = ADDR.unpack(payload)
    pos = addr - base
    if pos < 0 or pos + size > len(raw):
        raise CorruptHeader(f"variable content at {addr:#x} outside row")
    return raw[pos:pos + size]


def decode_complete(image: CompleteRowImage, schema: SchemaDef, *, check_invalid: bool = True) -> list[bytes]:
    raw = image.raw
    if len(raw) < 4:
        raise CorruptHeader("truncated header")
    if check_invalid and image.invalid:
        raise InvalidRow(image.base)
    start = image.fixed_start
    kv_size = image.kv_size
    if kv_size < schema.fixed_region_size or start + kv_size != len(raw):
        raise CorruptHeader(f"kv_size {kv_size} inconsistent with schema/image")
    out = []
    out_of_line = 0
    for fid, f in enumerate(schema.fields):
        pos = start + schema.fixed_offsets[fid]
        if f.is_fixed:
            out.append(raw[pos:pos + f.size])
        else:
            v = _read_var(raw, image.base, pos)
            if len(v) > INLINE_MAX:
                out_of_line += len(v)
            out.append(v)
    if schema.fixed_region_size + out_of_line != kv_size:
        raise CorruptHeader("kv_size does not match variable content")
    return out


def decode_complete_unchecked(image: CompleteRowImage, schema: SchemaDef) -> list[bytes]:
    """Decode regardless of the invalid flag; chain walkers may race a concurrent invalidation."""
    return decode_complete(image, schema, check_invalid=False)


def encode_delta(schema: SchemaDef, values: Mapping, prev: int, base: int = 0) -> DeltaRowImage:
    """Encode a partial update. ``values`` maps field ids (or names) to bytes."""
    if not values:
        raise EmptyFieldSet()
    if prev == NULL_ADDR:
        raise ValueError("a delta row must chain to a predecessor")
    by_id = {}
    for k, v in values.items():
        fid = schema.field_id(k) if isinstance(k, str) else k
        if not 0 <= fid < schema.field_count:
            raise FieldIdOutOfRange(fid)
        by_id[fid] = bytes(v)
    ids = sorted(by_id)
    meta_size = 4 + 2 * len(ids) + 8
    parts = [DELTA_PREFIX.pack(meta_size, len(ids)), struct.pack(f"<{len(ids)}H", *ids), ADDR.pack(prev)]
    pos = meta_size
    for fid in ids:
        v = by_id[fid]
        _check_value(schema, fid, v)
        f = schema.fields[fid]
        if f.is_fixed:
            parts.append(v)
            pos += len(v)
        else:
            parts.append(_var_head(f.type_code, v, base + pos + VAR_HEAD_SIZE))
            pos += VAR_HEAD_SIZE
            if len(v) > INLINE_MAX:
                parts.append(v)
                pos += len(v)
    return DeltaRowImage(b"".join(parts), base)


def decode_delta(image: DeltaRowImage, schema: SchemaDef) -> dict[int, bytes]:
    raw = image.raw
    out = {}
    pos = image.meta_size
    for fid in image.field_ids:
        if fid >= schema.field_count:
            raise FieldIdOutOfRange(fid)
        f = schema.fields[fid]
        if f.is_fixed:
            out[fid] = raw[pos:pos + f.size]
            pos += f.size
        else:
            v = _read_var(raw, image.base, pos)
            out[fid] = v
            pos += VAR_HEAD_SIZE + (len(v) if len(v) > INLINE_MAX else 0)
    if pos != len(raw):
        raise CorruptHeader("delta payload length mismatch")
    return out


def extract_field(image: RowImage, schema: SchemaDef, field_id: int) -> Optional[bytes]:
    """Return one field's bytes, or ``None`` when a delta does not carry it."""
    if not 0 <= field_id < schema.field_count:
        raise FieldIdOutOfRange(field_id)
    f = schema.fields[field_id]
    if isinstance(image, CompleteRowImage):
        pos = image.fixed_start + schema.fixed_offsets[field_id]
        if f.is_fixed:
            return image.raw[pos:pos + f.size]
        return _read_var(image.raw, image.base, pos)
    ids = image.field_ids
    if field_id not in ids:
        return None
    pos = image.meta_size
    for fid in ids:
        g = schema.fields[fid]
        if fid == field_id:
            return image.raw[pos:pos + g.size] if g.is_fixed else _read_var(image.raw, image.base, pos)
        if g.is_fixed:
            pos += g.size
        else:
            size = VAR_HEAD.unpack_from(image.raw, pos)[1]
            pos += VAR_HEAD_SIZE + (size if size > INLINE_MAX else 0)
    return None  # unreachable: field_id is in ids


def _var_head_positions(image: RowImage, schema: SchemaDef) -> list[int]:
    if isinstance(image, CompleteRowImage):
        return [image.fixed_start + schema.fixed_offsets[fid] for fid in schema.variable_ids]
    out = []
    pos = image.meta_size
    for fid in image.field_ids:
        f = schema.fields[fid]
        if f.is_fixed:
            pos += f.size
        else:
            out.append(pos)
            size = VAR_HEAD.unpack_from(image.raw, pos)[1]
            pos += VAR_HEAD_SIZE + (size if size > INLINE_MAX else 0)
    return out


def relocate(image: RowImage, schema: SchemaDef, new_base: int) -> RowImage:
    """Rebase the out-of-line content addresses of an image to ``new_base``."""
    if image.base == new_base:
        return image
    raw = bytearray(image.raw)
    shift = new_base - image.base
    for pos in _var_head_positions(image, schema):
        size = VAR_HEAD.unpack_from(raw, pos)[1]
        if size > INLINE_MAX:
            (addr,) = ADDR.unpack_from(raw, pos + 4)
            ADDR.pack_into(raw, pos + 4, addr + shift)
    return type(image)(bytes(raw), new_base)


def with_invalid_flag(image: CompleteRowImage) -> CompleteRowImage:
    raw = bytearray(image.raw)
    word = COMPLETE_HEADER.unpack_from(raw)[0] | INVALID_BIT
    struct.pack_into("<H", raw, 0, word)
    return CompleteRowImage(bytes(raw), image.base)


def with_chain_pointer(image: DeltaRowImage, prev: int) -> DeltaRowImage:
    raw = bytearray(image.raw)
    ADDR.pack_into(raw, image.meta_size - 8, prev)
    return DeltaRowImage(bytes(raw), image.base)


def has_out_of_line(schema: SchemaDef, values: Mapping[int, bytes]) -> bool:
    return any(not schema.fields[fid].is_fixed and len(v) > INLINE_MAX for fid, v in values.items())
