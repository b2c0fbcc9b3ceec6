"""Wire codec: 4-byte big-endian length prefix + UTF-8 JSON envelope document.

The document has exactly two fields, ``header`` and ``body``; formulas are
embedded as canonical situation-language text.  Encoding is canonical (sorted
keys, fixed separators) so decode/encode roundtrips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import fields as dataclass_fields

from .. import entish
from .messages import (
    BODY_CLASSES,
    PROTOCOL_VERSION,
    Envelope,
    Header,
    MessageType,
)

MAX_PAYLOAD = 1 << 20  # 1 MiB
_PREFIX = struct.Struct(">I")

_FORMULA_FIELDS = {
    "precondition",
    "effect",
    "commitment",
    "result_situation",
    "failure_description",
    "target_situation",
}

_WIRE_NAMES = {
    "max_time": "maxTime",
    "result_situation": "resultSituation",
    "failure_description": "failureDescription",
    "target_situation": "targetSituation",
    "service_id": "serviceId",
    "from_version": "fromVersion",
    "expected_version": "expectedVersion",
    "in_reply_to": "inReplyTo",
}
_FIELD_NAMES = {wire: py for py, wire in _WIRE_NAMES.items()}


class CodecError(Exception):
    pass


class FrameError(CodecError):
    pass


class MalformedDocument(CodecError):
    pass


class UnknownMessageType(CodecError):
    pass


class VersionMismatch(CodecError):
    pass


class OversizeMessage(CodecError):
    pass


def _body_to_doc(body) -> dict:
    doc = {}
    for f in dataclass_fields(body):
        value = getattr(body, f.name)
        wire = _WIRE_NAMES.get(f.name, f.name)
        if f.name in _FORMULA_FIELDS:
            doc[wire] = None if value is None else entish.to_text(value)
        else:
            doc[wire] = value
    return doc


def _body_from_doc(message_type: MessageType, doc: dict):
    cls = BODY_CLASSES[message_type]
    kwargs = {}
    known = {f.name for f in dataclass_fields(cls)}
    for wire, value in doc.items():
        name = _FIELD_NAMES.get(wire, wire)
        if name not in known:
            raise MalformedDocument(f"{message_type.value}: unexpected body field {wire}")
        if name in _FORMULA_FIELDS and value is not None:
            try:
                value = entish.parse(value)
            except entish.FormulaError as exc:
                raise MalformedDocument(f"{message_type.value}: bad formula in {wire}: {exc}") from exc
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise MalformedDocument(f"{message_type.value}: {exc}") from exc


def encode(envelope: Envelope) -> bytes:
    """Frame an envelope; raises OversizeMessage above 1 MiB of payload."""
    doc = {
        "header": {
            "sender": envelope.header.sender,
            "recipient": envelope.header.recipient,
            "messageType": envelope.header.message_type.value,
            "messageId": envelope.header.message_id,
            "sessionId": envelope.header.session_id,
            "version": envelope.header.version,
        },
        "body": _body_to_doc(envelope.body),
    }
    payload = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    if len(payload) > MAX_PAYLOAD:
        raise OversizeMessage(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    return _PREFIX.pack(len(payload)) + payload


def decode(data: bytes) -> Envelope:
    """Inverse of encode on valid input."""
    if len(data) < _PREFIX.size:
        raise FrameError(f"frame shorter than the {_PREFIX.size}-byte length prefix")
    (length,) = _PREFIX.unpack(data[: _PREFIX.size])
    if length > MAX_PAYLOAD:
        raise OversizeMessage(f"declared payload of {length} bytes exceeds {MAX_PAYLOAD}")
    payload = data[_PREFIX.size :]
    if len(payload) != length:
        raise FrameError(f"declared {length} payload bytes, got {len(payload)}")
    return decode_payload(payload)


def decode_payload(payload: bytes) -> Envelope:
    try:
        doc = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedDocument(str(exc)) from exc
    if not isinstance(doc, dict) or "header" not in doc or "body" not in doc:
        raise MalformedDocument("document must have header and body")
    header_doc = doc["header"]
    if not isinstance(header_doc, dict):
        raise MalformedDocument("header must be an object")
    try:
        type_name = header_doc["messageType"]
        version = header_doc["version"]
        header_fields = (
            header_doc["sender"],
            header_doc["recipient"],
            header_doc["messageId"],
            header_doc["sessionId"],
        )
    except KeyError as exc:
        raise MalformedDocument(f"header missing {exc.args[0]}") from exc
    if version != PROTOCOL_VERSION:
        raise VersionMismatch(f"got {version!r}, speak {PROTOCOL_VERSION!r}")
    try:
        message_type = MessageType(type_name)
    except ValueError:
        raise UnknownMessageType(f"unknown message type {type_name!r}") from None
    sender, recipient, message_id, session_id = header_fields
    body = _body_from_doc(message_type, doc["body"] if isinstance(doc["body"], dict) else {})
    header = Header(sender, recipient, message_type, message_id, session_id, version)
    return Envelope(header, body)


def read_frame(read_exactly) -> Envelope:
    """Read one envelope from a byte stream via a read(n)->bytes callable."""
    prefix = read_exactly(_PREFIX.size)
    if len(prefix) < _PREFIX.size:
        raise FrameError("stream ended inside the length prefix")
    (length,) = _PREFIX.unpack(prefix)
    if length > MAX_PAYLOAD:
        raise OversizeMessage(f"declared payload of {length} bytes exceeds {MAX_PAYLOAD}")
    payload = read_exactly(length)
    if len(payload) < length:
        raise FrameError("stream ended inside the payload")
    return decode_payload(payload)
