from __future__ import annotations

import json
import random

import pytest

from taskfleet import entish
from taskfleet.frp import (
    COORDINATOR,
    PARTICIPANT,
    Accept,
    Arrange,
    Cancel,
    Compensate,
    Compensated,
    Completed,
    End,
    Envelope,
    Execute,
    Failed,
    FrameError,
    MessageType,
    OversizeMessage,
    ProtocolViolation,
    Refuse,
    Session,
    State,
    Stop,
    Terms,
    UnknownMessageType,
    VersionMismatch,
    decode,
    encode,
    transition,
)
from taskfleet.frp.machine import COORDINATOR_TABLE, PARTICIPANT_TABLE, RECEIVE, SEND
from taskfleet.frp.messages import MessageError, make_envelope
from taskfleet.sched import EventLoop
from taskfleet.frp.transport import LoopbackHub, TcpEndpoint, connect_tcp


def env(body, *, sender="tm", recipient="sm:1", mid="m1", sid="s1"):
    return make_envelope(sender, recipient, mid, sid, body)


FORMULAS = [
    "Jar002 isOn ?Shelf",
    "Jar002 isOn Platform001",
    "true",
    "Jar002.PositionX = 12.5 AND Jar002.PositionY = 1.3 AND Jar002.PositionZ = 7",
    "a isOn b OR c.Weight <= 4",
]


def random_envelope(rng: random.Random) -> Envelope:
    f = lambda: entish.parse(rng.choice(FORMULAS))
    bodies = [
        lambda: Arrange(f(), f()),
        lambda: Terms(f(), round(rng.uniform(0, 500), 2), round(rng.uniform(1, 500), 2)),
        lambda: Refuse(rng.choice(["busy", "out of range", ""])),
        lambda: Accept(),
        lambda: Cancel(),
        lambda: Execute(f(), {"attempt": rng.randint(0, 5)}),
        lambda: Completed(f()),
        lambda: Failed(f() if rng.random() < 0.7 else None, "drive failure"),
        lambda: Stop(),
        lambda: Compensate(f()),
        lambda: Compensated(f()),
        lambda: End(),
    ]
    body = rng.choice(bodies)()
    return make_envelope(
        sender=f"ep{rng.randint(0, 9)}",
        recipient=f"ep{rng.randint(0, 9)}",
        message_id=f"m{rng.randint(0, 10 ** 6)}",
        session_id=f"s{rng.randint(0, 10 ** 4)}",
        body=body,
    )


class TestCodec:
    def test_roundtrip_structural(self):
        rng = random.Random(1)
        for _ in range(200):
            e = random_envelope(rng)
            data = encode(e)
            assert decode(data) == e
            assert encode(decode(data)) == data  # bit-exact re-encode

    def test_arrange_carries_canonical_formula_text(self):
        e = env(Arrange(entish.parse("Jar002 isOn ?Shelf"), entish.parse("Jar002 isOn Platform001")))
        doc = json.loads(encode(e)[4:])
        assert doc["body"]["precondition"] == "Jar002 isOn ?Shelf"
        assert doc["body"]["effect"] == "Jar002 isOn Platform001"
        assert doc["header"]["version"] == "somrs-frp/1"

    def test_oversize_message(self):
        big = Execute(entish.TRUE, {"blob": "x" * (2 << 20)})
        with pytest.raises(OversizeMessage):
            encode(env(big))

    def test_truncated_frame(self):
        data = encode(env(Accept()))
        with pytest.raises(FrameError):
            decode(data[:-3])
        with pytest.raises(FrameError):
            decode(data[:2])

    def test_unknown_message_type(self):
        data = encode(env(Accept()))
        doc = json.loads(data[4:])
        doc["header"]["messageType"] = "Foo"
        payload = json.dumps(doc).encode()
        framed = len(payload).to_bytes(4, "big") + payload
        with pytest.raises(UnknownMessageType):
            decode(framed)

    def test_version_mismatch(self):
        data = encode(env(Accept()))
        doc = json.loads(data[4:])
        doc["header"]["version"] = "somrs-frp/0"
        payload = json.dumps(doc).encode()
        with pytest.raises(VersionMismatch):
            decode(len(payload).to_bytes(4, "big") + payload)

    def test_terms_fixture_frame(self):
        frame = encode(env(Terms(entish.parse("Jar002 isOn Platform001"), 10.0, 60.0)))
        got = decode(frame)
        assert got.body.price == 10.0
        assert got.body.max_time == 60.0

    def test_invalid_terms_rejected_at_construction(self):
        with pytest.raises(MessageError):
            env(Terms(entish.TRUE, -1.0, 60.0))
        with pytest.raises(MessageError):
            env(Terms(entish.TRUE, 1.0, 0.0))


class TestStateMachine:
    def test_participant_happy_path(self):
        s = State.IDLE
        s = transition(PARTICIPANT, s, (RECEIVE, MessageType.ARRANGE))
        assert s == State.ARRANGE_RECEIVED
        s = transition(PARTICIPANT, s, (SEND, MessageType.TERMS))
        assert s == State.QUOTED
        s = transition(PARTICIPANT, s, (RECEIVE, MessageType.ACCEPT))
        assert s == State.ARRANGED

    def test_participant_cancelled_quote(self):
        s = transition(PARTICIPANT, State.QUOTED, (RECEIVE, MessageType.CANCEL))
        assert s == State.CANCELLED

    def test_coordinator_completion(self):
        s = transition(COORDINATOR, State.EXECUTING, (RECEIVE, MessageType.COMPLETED))
        assert s == State.COMPLETED
        s = transition(COORDINATOR, s, (SEND, MessageType.END))
        assert s == State.ENDED

    def test_illegal_event_raises_without_mutation(self):
        s = State.IDLE
        with pytest.raises(ProtocolViolation):
            transition(PARTICIPANT, s, (RECEIVE, MessageType.EXECUTE))
        assert s == State.IDLE

    def test_end_accepted_from_every_non_idle_state(self):
        # ArrangeSent exists only on the coordinator side and ArrangeReceived
        # only on the participant side.
        for state in State:
            if state in (State.IDLE, State.ENDED):
                continue
            if state != State.ARRANGE_SENT:
                assert transition(PARTICIPANT, state, (RECEIVE, MessageType.END)) == State.ENDED
            if state != State.ARRANGE_RECEIVED:
                assert transition(COORDINATOR, state, (SEND, MessageType.END)) == State.ENDED

    def test_no_transition_out_of_ended(self):
        for (state, _event), nxt in {**PARTICIPANT_TABLE, **COORDINATOR_TABLE}.items():
            assert state != State.ENDED

    def test_single_terminal_state(self):
        # No legal event sequence can reach two terminal states: Ended is the
        # only state with no outgoing transitions, and nothing leaves it.
        for table in (PARTICIPANT_TABLE, COORDINATOR_TABLE):
            sources = {state for (state, _event) in table}
            reachable = {State.IDLE} | set(table.values())
            terminal = {s for s in reachable if s not in sources}
            assert terminal == {State.ENDED}

    def test_duality(self):
        # Every coordinator send is a legal participant receive in the paired
        # state, and vice versa.
        flipped = {
            (state, (RECEIVE if d == SEND else SEND, mt)): nxt
            for (state, (d, mt)), nxt in COORDINATOR_TABLE.items()
        }
        renamed = {
            (self_state_pair(state), (d, mt)): self_state_pair(nxt)
            for (state, (d, mt)), nxt in flipped.items()
        }
        assert renamed == {
            (state, event): nxt for (state, event), nxt in PARTICIPANT_TABLE.items()
        }

    def test_session_duplicate_delivery_is_noop(self):
        session = Session(PARTICIPANT, "s1")
        arrange = env(Arrange(entish.TRUE, entish.parse("Jar002 isOn Platform001")))
        assert session.on_receive(arrange) == State.ARRANGE_RECEIVED
        assert session.on_receive(arrange) == State.ARRANGE_RECEIVED  # duplicate
        terms = env(Terms(entish.TRUE, 1.0, 1.0), sender="sm:1", recipient="tm", mid="m2")
        session.on_send(terms)
        assert session.on_receive(arrange) == State.QUOTED  # still a no-op later


def self_state_pair(state: State) -> State:
    if state == State.ARRANGE_SENT:
        return State.ARRANGE_RECEIVED
    return state


class TestLoopback:
    def test_delivery_order_is_deterministic(self):
        loop = EventLoop()
        hub = LoopbackHub(loop)
        got = []
        hub.register("a", lambda e: got.append(("a", e.header.message_id)))
        hub.register("b", lambda e: got.append(("b", e.header.message_id)))
        hub.send(env(Accept(), recipient="a", mid="1"))
        hub.send(env(Accept(), recipient="b", mid="2"))
        hub.send(env(Accept(), recipient="a", mid="3"))
        loop.run_until_idle()
        assert got == [("a", "1"), ("b", "2"), ("a", "3")]


class TestTcpTransport:
    def test_request_response_over_sockets(self):
        def handler(envelope, reply):
            reply(make_envelope("srv", envelope.header.sender, "r1", envelope.header.session_id, Accept()))

        endpoint = TcpEndpoint("127.0.0.1", 0, handler).start()
        try:
            conn = connect_tcp(endpoint.address)
            reply = conn.request(env(Arrange(entish.TRUE, entish.parse("a isOn b")), recipient="srv"))
            assert reply.header.message_type == MessageType.ACCEPT
            conn.close()
        finally:
            endpoint.stop()
