"""Exception types shared across the package."""


class CtigraphError(Exception):
    """Base class for all package errors."""


class ValidationError(CtigraphError):
    """A domain value violates one of its invariants."""


class EmptyDescription(ValidationError):
    """Normalization received whitespace-only text."""


class MalformedEncoding(CtigraphError):
    """Byte stream is not a valid canonical encoding.

    ``offset`` is the byte position at which decoding failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class TypeMismatch(CtigraphError):
    """Decoded type tag disagrees with the expected one."""


class DuplicateName(CtigraphError):
    """A component name is already registered for that stage kind."""


class UnknownComponent(CtigraphError):
    """Config names a component absent from the registry."""


class BuildError(CtigraphError):
    """Pipeline configuration is invalid; raised before any processing."""


class UnreadablePayload(CtigraphError):
    """A raw item's payload could not be turned into a report."""


class TemplateMismatch(CtigraphError):
    """The source template's title selector matched nothing."""


class GazetteerMissing(CtigraphError):
    """A configured gazetteer file is absent."""


class DegenerateCorpus(CtigraphError):
    """Training corpus carries no entity labels at all."""


class NonfiniteLoss(CtigraphError):
    """Training produced a non-finite objective; aborted with diagnostics."""


class SourceUnavailable(CtigraphError):
    """A source could not be fetched after all retries."""


class WindowTooShort(CtigraphError):
    """Throughput window does not cover the 10s minimum."""


class ConflictingGroup(ValidationError):
    """An alias name appears in two groups of the same entity type."""


class CorruptLog(CtigraphError):
    """Store log record failed its checksum.

    ``offset`` is the byte position of the corrupt record.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class VersionMismatch(CtigraphError):
    """Store file was written by an unsupported format version."""


class QuerySyntaxError(CtigraphError):
    """Query text failed to parse.

    Carries 1-based ``line``/``column`` and the token set that was expected.
    """

    def __init__(self, message: str, line: int, column: int, expected: tuple[str, ...] = ()):
        detail = f"{message} at line {line}, column {column}"
        if expected:
            detail += " (expected " + " or ".join(expected) + ")"
        super().__init__(detail)
        self.line = line
        self.column = column
        self.expected = expected


class UnboundVariable(CtigraphError):
    """Query references a variable other than the matched one."""


class EmptyGraph(CtigraphError):
    """Operation needs a non-empty graph."""


class NodeNotFound(CtigraphError):
    """Requested node id does not exist."""
