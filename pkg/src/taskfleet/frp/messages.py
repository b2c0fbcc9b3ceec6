"""Envelope and message-body definitions.

Every message is an envelope: a header naming sender, recipient, message
type, message id, session id, and protocol version, plus a body whose shape
is fixed by the message type.  Session messages (Arrange .. End) drive the
coordinator/participant machines; the administrative types (Publish,
Unpublish, Discover, GetSnapshot, Commit, Subscribe, MapEvent, Response)
carry registry and repository traffic over the same framing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

PROTOCOL_VERSION = "somrs-frp/1"


class MessageType(str, Enum):
    ARRANGE = "Arrange"
    TERMS = "Terms"
    REFUSE = "Refuse"
    ACCEPT = "Accept"
    CANCEL = "Cancel"
    EXECUTE = "Execute"
    COMPLETED = "Completed"
    FAILED = "Failed"
    STOP = "Stop"
    COMPENSATE = "Compensate"
    COMPENSATED = "Compensated"
    END = "End"
    # administrative plane
    PUBLISH = "Publish"
    UNPUBLISH = "Unpublish"
    DISCOVER = "Discover"
    GET_SNAPSHOT = "GetSnapshot"
    COMMIT = "Commit"
    SUBSCRIBE = "Subscribe"
    MAP_EVENT = "MapEvent"
    RESPONSE = "Response"


SESSION_TYPES = {
    MessageType.ARRANGE,
    MessageType.TERMS,
    MessageType.REFUSE,
    MessageType.ACCEPT,
    MessageType.CANCEL,
    MessageType.EXECUTE,
    MessageType.COMPLETED,
    MessageType.FAILED,
    MessageType.STOP,
    MessageType.COMPENSATE,
    MessageType.COMPENSATED,
    MessageType.END,
}


class MessageError(Exception):
    pass


@dataclass(frozen=True)
class Header:
    sender: str
    recipient: str
    message_type: MessageType
    message_id: str
    session_id: str
    version: str = PROTOCOL_VERSION


@dataclass(frozen=True)
class Arrange:
    precondition: object  # Formula
    effect: object  # Formula


@dataclass(frozen=True)
class Terms:
    commitment: object  # Formula
    price: float
    max_time: float


@dataclass(frozen=True)
class Refuse:
    reason: str = ""


@dataclass(frozen=True)
class Accept:
    pass


@dataclass(frozen=True)
class Cancel:
    pass


@dataclass(frozen=True)
class Execute:
    precondition: object  # Formula
    inputs: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Completed:
    result_situation: object  # Formula


@dataclass(frozen=True)
class Failed:
    failure_description: object | None  # Formula or None
    reason: str = ""


@dataclass(frozen=True)
class Stop:
    pass


@dataclass(frozen=True)
class Compensate:
    target_situation: object  # Formula


@dataclass(frozen=True)
class Compensated:
    result_situation: object  # Formula


@dataclass(frozen=True)
class End:
    pass


@dataclass(frozen=True)
class Publish:
    record: dict


@dataclass(frozen=True)
class Unpublish:
    service_id: str


@dataclass(frozen=True)
class Discover:
    effect: object | None = None  # Formula; None lists every record
    precondition: object | None = None


@dataclass(frozen=True)
class GetSnapshot:
    pass


@dataclass(frozen=True)
class Commit:
    delta: list
    expected_version: int


@dataclass(frozen=True)
class Subscribe:
    from_version: int


@dataclass(frozen=True)
class MapEvent:
    version: int
    delta: list


@dataclass(frozen=True)
class Response:
    in_reply_to: str
    ok: bool
    error: str = ""
    payload: dict = field(default_factory=dict)


BODY_CLASSES = {
    MessageType.ARRANGE: Arrange,
    MessageType.TERMS: Terms,
    MessageType.REFUSE: Refuse,
    MessageType.ACCEPT: Accept,
    MessageType.CANCEL: Cancel,
    MessageType.EXECUTE: Execute,
    MessageType.COMPLETED: Completed,
    MessageType.FAILED: Failed,
    MessageType.STOP: Stop,
    MessageType.COMPENSATE: Compensate,
    MessageType.COMPENSATED: Compensated,
    MessageType.END: End,
    MessageType.PUBLISH: Publish,
    MessageType.UNPUBLISH: Unpublish,
    MessageType.DISCOVER: Discover,
    MessageType.GET_SNAPSHOT: GetSnapshot,
    MessageType.COMMIT: Commit,
    MessageType.SUBSCRIBE: Subscribe,
    MessageType.MAP_EVENT: MapEvent,
    MessageType.RESPONSE: Response,
}


@dataclass(frozen=True)
class Envelope:
    header: Header
    body: object

    def __post_init__(self):
        expected = BODY_CLASSES.get(self.header.message_type)
        if expected is None or not isinstance(self.body, expected):
            raise MessageError(
                f"body {type(self.body).__name__} does not match message type "
                f"{self.header.message_type.value}"
            )
        if isinstance(self.body, Terms):
            if self.body.price < 0:
                raise MessageError("Terms.price must be nonnegative")
            if self.body.max_time <= 0:
                raise MessageError("Terms.maxTime must be positive")


def make_envelope(
    sender: str,
    recipient: str,
    message_id: str,
    session_id: str,
    body,
) -> Envelope:
    for message_type, cls in BODY_CLASSES.items():
        if type(body) is cls:
            return Envelope(Header(sender, recipient, message_type, message_id, session_id), body)
    raise MessageError(f"no message type for body {type(body).__name__}")
