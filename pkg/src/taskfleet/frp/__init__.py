"""Failure Recovery Protocol: envelopes, codec, session state machine, transport."""

from .messages import (
    PROTOCOL_VERSION,
    Accept,
    Arrange,
    Cancel,
    Commit,
    Compensate,
    Compensated,
    Completed,
    Discover,
    End,
    Envelope,
    Execute,
    Failed,
    GetSnapshot,
    Header,
    MapEvent,
    MessageType,
    Publish,
    Refuse,
    Response,
    Stop,
    Subscribe,
    Terms,
    Unpublish,
)
from .codec import (
    CodecError,
    FrameError,
    MalformedDocument,
    OversizeMessage,
    UnknownMessageType,
    VersionMismatch,
    decode,
    encode,
    read_frame,
)
from .machine import (
    COORDINATOR,
    PARTICIPANT,
    ProtocolViolation,
    Session,
    SessionState,
    State,
    transition,
)
from .transport import LoopbackHub, TcpEndpoint, connect_tcp

__all__ = [name for name in dir() if not name.startswith("_")]
