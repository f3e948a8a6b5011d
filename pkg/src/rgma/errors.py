"""Exception hierarchy shared by every layer of the framework.

Wire errors carry the exception class name as their code, so the mapping
between a remote failure and the local exception is one dict lookup
(see WIRE_CODES at the bottom).
"""


class RgmaError(Exception):
    """Base class for all framework errors."""


class SqlSyntaxError(RgmaError):
    """Statement text does not match the supported grammar."""


class SchemaError(RgmaError):
    """Statement is well-formed but inconsistent with a table definition."""


class TypeMismatchError(RgmaError):
    """A literal, column or expression has the wrong type, or a column is unbound."""


class UnsupportedFeatureError(RgmaError):
    """Legal SQL that is deliberately outside the supported subset."""


class KeyMismatchError(RgmaError):
    """Two tuples with different defining-key values where equality is required."""


class FrameError(RgmaError):
    """A byte frame is truncated, oversized or not decodable."""


class ProtocolError(RgmaError):
    """A structurally valid frame that violates the message protocol."""


class UnknownComponentError(RgmaError):
    """Operation names a component id the registry does not hold (or has expired)."""


class ViewViolationError(RgmaError):
    """An inserted tuple contradicts the view predicate the producer declared."""


class NotInsertableError(RgmaError):
    """Insert attempted on a producer type without the insert interface."""


class StorageError(RgmaError):
    """On-disk store or log failure; the affected write is not acknowledged."""


class UnsupportedQueryClassError(RgmaError):
    """Producer type or query shape cannot answer the requested query class."""


class UnsupportedProducerTypeError(RgmaError):
    """Operation (e.g. cleanup) does not apply to this producer type."""


class SinkMismatchError(RgmaError):
    """Archiver sink schema does not match an archived table."""


class SinkInUseError(RgmaError):
    """Archiver sink is already controlled by another archiver."""


class SourceUnsupportedError(RgmaError):
    """Archiver asked to consume from something that is not a stream source."""


class ScenarioError(RgmaError):
    """Scenario description is internally inconsistent."""


class ConnectionClosedError(RgmaError):
    """Peer closed the connection mid-exchange."""


#: Error code (wire string) -> exception class. Codes are the class names.
WIRE_CODES = {
    cls.__name__: cls
    for cls in (
        SqlSyntaxError,
        SchemaError,
        TypeMismatchError,
        UnsupportedFeatureError,
        KeyMismatchError,
        FrameError,
        ProtocolError,
        UnknownComponentError,
        ViewViolationError,
        NotInsertableError,
        StorageError,
        UnsupportedQueryClassError,
        UnsupportedProducerTypeError,
        SinkMismatchError,
        SinkInUseError,
        SourceUnsupportedError,
        ScenarioError,
        ConnectionClosedError,
    )
}


def error_from_wire(code: str, message: str) -> RgmaError:
    cls = WIRE_CODES.get(code, RgmaError)
    return cls(message)
