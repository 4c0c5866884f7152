"""Exception hierarchy shared by every layer of the store."""


class FocusError(Exception):
    """Base class for all engine errors."""


# schema registry
class SchemaError(FocusError):
    pass


class DuplicateSchemaName(SchemaError):
    pass


class DuplicateFieldName(SchemaError):
    pass


class ZeroSizeFixedField(SchemaError):
    pass


class ZeroFieldSchema(SchemaError):
    pass


class UnknownFieldName(SchemaError, KeyError):
    pass


class UnknownSchema(SchemaError, KeyError):
    pass


class FieldIdOutOfRange(SchemaError, IndexError):
    pass


class SchemaRegionFull(SchemaError):
    pass


# record codec
class CodecError(FocusError):
    pass


class FixedSizeMismatch(CodecError):
    pass


class MissingFieldValue(CodecError):
    pass


class EmptyFieldSet(CodecError):
    pass


class CorruptHeader(CodecError):
    pass


class InvalidRow(CodecError):
    pass


class RowTooLarge(CodecError):
    pass


# persistence
class BackendError(FocusError):
    pass


class OutOfRange(BackendError):
    pass


class UnalignedFlush(BackendError):
    pass


class SimulatedCrash(BackendError):
    """Raised by the backend when a scheduled crash point is reached."""


class LogError(FocusError):
    pass


class CapacityExhausted(LogError):
    pass


class DLogFull(LogError):
    """The owning chunk's delta log cannot hold another row."""


class BadAddress(LogError):
    pass


class ChunkBusy(LogError):
    pass


class BadSuperblock(LogError):
    pass


# index / engine
class KeyAbsent(FocusError, KeyError):
    pass


class UnsortedInput(FocusError, ValueError):
    pass


# cache
class ChecksumMismatch(FocusError):
    pass


class InvalidMix(FocusError, ValueError):
    pass
