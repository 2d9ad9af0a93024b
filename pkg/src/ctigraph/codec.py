"""Canonical serialization for intermediate values.

Two loss-free projections of the same plain structure:

* a self-describing, length-prefixed binary encoding (the wire/store format;
  map keys are emitted in sorted order so equal values encode byte-identically)
* a JSON text projection used for debugging and as the fixture format
  (bytes appear as ``{"$bytes": "<hex>"}``).

See ``docs/encoding.md`` for the byte-level layout.
"""

from __future__ import annotations

import json
import struct
from typing import Any

from .errors import MalformedEncoding, TypeMismatch
from .model import CtiRecord, OntologyGraph, ReportDoc

MAGIC = b"CTI1"

K_NULL = 0x00
K_FALSE = 0x01
K_TRUE = 0x02
K_INT = 0x03
K_FLOAT = 0x04
K_STR = 0x05
K_BYTES = 0x06
K_LIST = 0x07
K_MAP = 0x08

#: Registry of envelope type tags. CrfModel registers itself on import of
#: :mod:`ctigraph.crf` to avoid a circular dependency.
TYPE_TAGS: dict[str, int] = {
    "report_doc": 1,
    "cti_record": 2,
    "ontology_graph": 3,
    "crf_model": 4,
    "value": 5,
}
_CLASS_TAGS: dict[type, str] = {
    ReportDoc: "report_doc",
    CtiRecord: "cti_record",
    OntologyGraph: "ontology_graph",
}
_TAG_LOADERS: dict[str, Any] = {
    "report_doc": ReportDoc.from_plain,
    "cti_record": CtiRecord.from_plain,
    "ontology_graph": OntologyGraph.from_plain,
}


def register_type(tag_name: str, cls: type, loader) -> None:
    _CLASS_TAGS[cls] = tag_name
    _TAG_LOADERS[tag_name] = loader


def _write_uvarint(out: bytearray, value: int) -> None:
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return


def _write_varint(out: bytearray, value: int) -> None:
    # zigzag mapping so negatives stay compact
    _write_uvarint(out, (value << 1) ^ (value >> 63) if value >= 0 else ((-value) << 1) - 1)


def _encode_value(out: bytearray, value: Any) -> None:
    if value is None:
        out.append(K_NULL)
    elif value is True:
        out.append(K_TRUE)
    elif value is False:
        out.append(K_FALSE)
    elif isinstance(value, int):
        out.append(K_INT)
        _write_varint(out, value)
    elif isinstance(value, float):
        out.append(K_FLOAT)
        out.extend(struct.pack(">d", value))
    elif isinstance(value, str):
        raw = value.encode("utf-8")
        out.append(K_STR)
        _write_uvarint(out, len(raw))
        out.extend(raw)
    elif isinstance(value, (bytes, bytearray)):
        out.append(K_BYTES)
        _write_uvarint(out, len(value))
        out.extend(value)
    elif isinstance(value, (list, tuple)):
        out.append(K_LIST)
        _write_uvarint(out, len(value))
        for item in value:
            _encode_value(out, item)
    elif isinstance(value, dict):
        out.append(K_MAP)
        _write_uvarint(out, len(value))
        for key in sorted(value):
            if not isinstance(key, str):
                raise TypeError(f"map keys must be strings, got {type(key).__name__}")
            _encode_value(out, key)
            _encode_value(out, value[key])
    else:
        raise TypeError(f"cannot encode {type(value).__name__}")


class _Reader:
    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise MalformedEncoding("truncated buffer", self.pos)
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def read_uvarint(self) -> int:
        shift = 0
        result = 0
        start = self.pos
        while True:
            if self.pos >= len(self.data):
                raise MalformedEncoding("truncated varint", start)
            byte = self.data[self.pos]
            self.pos += 1
            result |= (byte & 0x7F) << shift
            if not byte & 0x80:
                return result
            shift += 7
            if shift > 70:
                raise MalformedEncoding("varint too long", start)

    def read_varint(self) -> int:
        raw = self.read_uvarint()
        return (raw >> 1) ^ -(raw & 1)

    def read_value(self) -> Any:
        kind_at = self.pos
        kind = self.take(1)[0]
        if kind == K_NULL:
            return None
        if kind == K_TRUE:
            return True
        if kind == K_FALSE:
            return False
        if kind == K_INT:
            return self.read_varint()
        if kind == K_FLOAT:
            return struct.unpack(">d", self.take(8))[0]
        if kind == K_STR:
            n = self.read_uvarint()
            return self.take(n).decode("utf-8")
        if kind == K_BYTES:
            n = self.read_uvarint()
            return bytes(self.take(n))
        if kind == K_LIST:
            n = self.read_uvarint()
            return [self.read_value() for _ in range(n)]
        if kind == K_MAP:
            n = self.read_uvarint()
            result = {}
            for _ in range(n):
                key = self.read_value()
                if not isinstance(key, str):
                    raise MalformedEncoding("map key is not a string", kind_at)
                result[key] = self.read_value()
            return result
        raise MalformedEncoding(f"unknown value kind 0x{kind:02x}", kind_at)


def encode_value(value: Any) -> bytes:
    """Encode one plain value (no envelope)."""
    out = bytearray()
    _encode_value(out, value)
    return bytes(out)


def decode_value(data: bytes) -> Any:
    """Decode one plain value; trailing bytes are an error."""
    reader = _Reader(data)
    value = reader.read_value()
    if reader.pos != len(data):
        raise MalformedEncoding("trailing bytes after value", reader.pos)
    return value


def _tag_of(value: Any) -> str:
    for cls, tag in _CLASS_TAGS.items():
        if isinstance(value, cls):
            return tag
    return "value"


def serialize(value: Any) -> bytes:
    """Canonical byte encoding of an intermediate value.

    Deterministic: field-wise equal values produce identical byte strings.
    """
    tag_name = _tag_of(value)
    plain = value.to_plain() if tag_name != "value" else value
    out = bytearray(MAGIC)
    out.append(TYPE_TAGS[tag_name])
    _encode_value(out, plain)
    return bytes(out)


def deserialize(data: bytes, expected: str | type | None = None) -> Any:
    """Inverse of :func:`serialize`.

    ``expected`` may be a tag name ("report_doc") or a registered class;
    a disagreeing tag raises :class:`TypeMismatch`, malformed bytes raise
    :class:`MalformedEncoding` with the failing offset.
    """
    if len(data) < 5:
        raise MalformedEncoding("buffer shorter than envelope header", 0)
    if data[:4] != MAGIC:
        raise MalformedEncoding("bad magic", 0)
    tag_byte = data[4]
    tag_name = next((name for name, b in TYPE_TAGS.items() if b == tag_byte), None)
    if tag_name is None:
        raise MalformedEncoding(f"unknown type tag 0x{tag_byte:02x}", 4)
    if expected is not None:
        want = expected if isinstance(expected, str) else _CLASS_TAGS.get(expected, "value")
        if want != tag_name:
            raise TypeMismatch(f"expected {want}, found {tag_name}")
    reader = _Reader(data, 5)
    plain = reader.read_value()
    if reader.pos != len(data):
        raise MalformedEncoding("trailing bytes after value", reader.pos)
    if tag_name == "value":
        return plain
    return _TAG_LOADERS[tag_name](plain)


def _jsonable(value: Any) -> Any:
    if isinstance(value, (bytes, bytearray)):
        return {"$bytes": value.hex()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    return value


def _unjsonable(value: Any) -> Any:
    if isinstance(value, dict):
        if set(value) == {"$bytes"}:
            return bytes.fromhex(value["$bytes"])
        return {k: _unjsonable(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_unjsonable(v) for v in value]
    return value


def to_json(value: Any, indent: int | None = 2) -> str:
    """JSON projection of the same envelope; loss-free for all plain values."""
    tag_name = _tag_of(value)
    plain = value.to_plain() if tag_name != "value" else value
    return json.dumps({"$type": tag_name, "value": _jsonable(plain)},
                      indent=indent, sort_keys=True)


def from_json(text: str, expected: str | type | None = None) -> Any:
    doc = json.loads(text)
    tag_name = doc.get("$type")
    if tag_name not in TYPE_TAGS:
        raise MalformedEncoding(f"unknown $type {tag_name!r}", 0)
    if expected is not None:
        want = expected if isinstance(expected, str) else _CLASS_TAGS.get(expected, "value")
        if want != tag_name:
            raise TypeMismatch(f"expected {want}, found {tag_name}")
    plain = _unjsonable(doc["value"])
    if tag_name == "value":
        return plain
    return _TAG_LOADERS[tag_name](plain)
