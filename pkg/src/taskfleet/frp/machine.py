"""Per-session protocol state machines for the coordinator and participant roles.

One machine exists per session id.  Machines are pure: ``transition`` maps
(role, state, event) to the next state and raises ``ProtocolViolation`` for
anything outside the tables, leaving the input untouched.  The coordinator
and participant tables are duals: every coordinator send is a legal
participant receive in the paired state, and vice versa.

``End`` is accepted from every non-Idle, non-Ended state; ``Ended`` is
terminal.  The ``Session`` wrapper adds message-id bookkeeping so duplicate
deliveries are idempotent no-ops.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .messages import Envelope, MessageType


class Role(str, Enum):
    COORDINATOR = "coordinator"
    PARTICIPANT = "participant"


COORDINATOR = Role.COORDINATOR
PARTICIPANT = Role.PARTICIPANT


class State(str, Enum):
    IDLE = "Idle"
    ARRANGE_SENT = "ArrangeSent"
    ARRANGE_RECEIVED = "ArrangeReceived"
    QUOTED = "Quoted"
    REFUSED = "Refused"
    ARRANGED = "Arranged"
    EXECUTING = "Executing"
    COMPLETED = "Completed"
    FAILED = "Failed"
    COMPENSATING = "Compensating"
    COMPENSATED = "Compensated"
    CANCELLED = "Cancelled"
    ENDED = "Ended"


SEND = "send"
RECEIVE = "receive"

Event = tuple  # (direction, MessageType)


class ProtocolViolation(Exception):
    def __init__(self, state: State, event):
        direction, message_type = event
        super().__init__(f"illegal {direction} {message_type.value} in state {state.value}")
        self.state = state
        self.event = event


def _table(rows) -> dict:
    table = {}
    for state, direction, message_type, nxt in rows:
        table[(state, (direction, message_type))] = nxt
    return table


_PARTICIPANT_ROWS = [
    (State.IDLE, RECEIVE, MessageType.ARRANGE, State.ARRANGE_RECEIVED),
    (State.ARRANGE_RECEIVED, SEND, MessageType.TERMS, State.QUOTED),
    (State.ARRANGE_RECEIVED, SEND, MessageType.REFUSE, State.REFUSED),
    (State.QUOTED, RECEIVE, MessageType.ACCEPT, State.ARRANGED),
    (State.QUOTED, RECEIVE, MessageType.CANCEL, State.CANCELLED),
    (State.ARRANGED, RECEIVE, MessageType.EXECUTE, State.EXECUTING),
    (State.ARRANGED, RECEIVE, MessageType.CANCEL, State.CANCELLED),
    (State.EXECUTING, SEND, MessageType.COMPLETED, State.COMPLETED),
    (State.EXECUTING, SEND, MessageType.FAILED, State.FAILED),
    (State.EXECUTING, RECEIVE, MessageType.STOP, State.CANCELLED),
    (State.COMPLETED, RECEIVE, MessageType.COMPENSATE, State.COMPENSATING),
    (State.FAILED, RECEIVE, MessageType.COMPENSATE, State.COMPENSATING),
    (State.CANCELLED, RECEIVE, MessageType.COMPENSATE, State.COMPENSATING),
    (State.COMPENSATING, SEND, MessageType.COMPENSATED, State.COMPENSATED),
]

_COORDINATOR_ROWS = [
    (State.IDLE, SEND, MessageType.ARRANGE, State.ARRANGE_SENT),
    (State.ARRANGE_SENT, RECEIVE, MessageType.TERMS, State.QUOTED),
    (State.ARRANGE_SENT, RECEIVE, MessageType.REFUSE, State.REFUSED),
    (State.QUOTED, SEND, MessageType.ACCEPT, State.ARRANGED),
    (State.QUOTED, SEND, MessageType.CANCEL, State.CANCELLED),
    (State.ARRANGED, SEND, MessageType.EXECUTE, State.EXECUTING),
    (State.ARRANGED, SEND, MessageType.CANCEL, State.CANCELLED),
    (State.EXECUTING, RECEIVE, MessageType.COMPLETED, State.COMPLETED),
    (State.EXECUTING, RECEIVE, MessageType.FAILED, State.FAILED),
    (State.EXECUTING, SEND, MessageType.STOP, State.CANCELLED),
    (State.COMPLETED, SEND, MessageType.COMPENSATE, State.COMPENSATING),
    (State.FAILED, SEND, MessageType.COMPENSATE, State.COMPENSATING),
    (State.CANCELLED, SEND, MessageType.COMPENSATE, State.COMPENSATING),
    (State.COMPENSATING, RECEIVE, MessageType.COMPENSATED, State.COMPENSATED),
]


def _with_end(rows, direction, skip):
    rows = list(rows)
    for state in State:
        if state not in (State.IDLE, State.ENDED, skip):
            rows.append((state, direction, MessageType.END, State.ENDED))
    return rows


PARTICIPANT_TABLE = _table(_with_end(_PARTICIPANT_ROWS, RECEIVE, skip=State.ARRANGE_SENT))
COORDINATOR_TABLE = _table(_with_end(_COORDINATOR_ROWS, SEND, skip=State.ARRANGE_RECEIVED))

_TABLES = {Role.COORDINATOR: COORDINATOR_TABLE, Role.PARTICIPANT: PARTICIPANT_TABLE}

TERMINAL_STATES = {State.ENDED}


def transition(role: Role, state: State, event) -> State:
    """Next state for (direction, messageType); raises ProtocolViolation if illegal."""
    direction, message_type = event
    key = (state, (direction, MessageType(message_type)))
    table = _TABLES[role]
    if key not in table:
        raise ProtocolViolation(state, (direction, MessageType(message_type)))
    return table[key]


@dataclass
class SessionState:
    role: Role
    state: State = State.IDLE
    last_message_id: str = ""


@dataclass
class Session:
    """Stateful wrapper: applies transitions and deduplicates by message id."""

    role: Role
    session_id: str
    state: State = State.IDLE
    last_message_id: str = ""
    seen_message_ids: set = field(default_factory=set)
    sent_message_ids: set = field(default_factory=set)

    def on_send(self, envelope: Envelope) -> State:
        message_id = envelope.header.message_id
        if message_id in self.sent_message_ids:
            return self.state  # duplicate send attempt is a no-op
        next_state = transition(self.role, self.state, (SEND, envelope.header.message_type))
        self.sent_message_ids.add(message_id)
        self.state = next_state
        self.last_message_id = message_id
        return self.state

    def on_receive(self, envelope: Envelope) -> State:
        message_id = envelope.header.message_id
        if message_id in self.seen_message_ids:
            return self.state  # duplicate delivery is idempotent
        next_state = transition(self.role, self.state, (RECEIVE, envelope.header.message_type))
        self.seen_message_ids.add(message_id)
        self.state = next_state
        self.last_message_id = message_id
        return self.state

    @property
    def terminal(self) -> bool:
        return self.state in TERMINAL_STATES
