"""Envelope transports: in-process loopback and framed TCP.

Both deliver whole envelopes to per-address handlers.  The loopback hub
schedules deliveries onto an event loop, so in-process runs stay
deterministic; the TCP endpoint speaks the length-prefixed framing from the
codec and hands received envelopes to the same handler signature.
"""

from __future__ import annotations

import socket
import socketserver
import threading
from typing import Callable

from ..sched import EventLoop
from . import codec
from .messages import Envelope


class TransportError(Exception):
    pass


class UnknownAddress(TransportError):
    pass


class LoopbackHub:
    """Deterministic in-process transport: delivery order follows loop order."""

    def __init__(self, loop: EventLoop, latency: float = 0.0):
        self.loop = loop
        self.latency = latency
        self._handlers: dict[str, Callable[[Envelope], None]] = {}

    def register(self, address: str, handler: Callable[[Envelope], None]) -> None:
        self._handlers[address] = handler

    def unregister(self, address: str) -> None:
        self._handlers.pop(address, None)

    def send(self, envelope: Envelope) -> None:
        # Encode/decode on every hop so loopback exercises the wire format.
        data = codec.encode(envelope)
        recipient = envelope.header.recipient
        if recipient not in self._handlers:
            raise UnknownAddress(f"no endpoint registered at {recipient}")
        self.loop.call_later(self.latency, self._deliver, recipient, data)

    def _deliver(self, recipient: str, data: bytes) -> None:
        handler = self._handlers.get(recipient)
        if handler is not None:
            handler(codec.decode(data))


class _FrpRequestHandler(socketserver.BaseRequestHandler):
    def handle(self):
        sock: socket.socket = self.request

        def read_exactly(n: int) -> bytes:
            chunks = b""
            while len(chunks) < n:
                chunk = sock.recv(n - len(chunks))
                if not chunk:
                    return chunks
                chunks += chunk
            return chunks

        reply_lock = threading.Lock()

        def reply(envelope: Envelope) -> None:
            with reply_lock:
                sock.sendall(codec.encode(envelope))

        while True:
            try:
                envelope = codec.read_frame(read_exactly)
            except codec.FrameError:
                return  # connection closed or torn frame
            except codec.CodecError:
                return
            self.server.envelope_handler(envelope, reply)  # type: ignore[attr-defined]


class _FrpServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class TcpEndpoint:
    """Listening endpoint: handler(envelope, reply) per received frame."""

    def __init__(self, host: str, port: int, handler: Callable[[Envelope, Callable], None]):
        self._server = _FrpServer((host, port), _FrpRequestHandler)
        self._server.envelope_handler = handler  # type: ignore[attr-defined]
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def address(self) -> str:
        host, port = self._server.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> "TcpEndpoint":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()


class TcpConnection:
    """Client side of one framed stream; incoming envelopes go to on_envelope."""

    def __init__(self, address: str, on_envelope: Callable[[Envelope], None] | None = None):
        host, port = address.rsplit(":", 1)
        self._sock = socket.create_connection((host, int(port)), timeout=30)
        self._send_lock = threading.Lock()
        self._on_envelope = on_envelope
        self._pending: list[Envelope] = []
        self._pending_cond = threading.Condition()
        self._closed = False
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_exactly(self, n: int) -> bytes:
        chunks = b""
        while len(chunks) < n:
            chunk = self._sock.recv(n - len(chunks))
            if not chunk:
                return chunks
            chunks += chunk
        return chunks

    def _read_loop(self) -> None:
        while not self._closed:
            try:
                envelope = codec.read_frame(self._read_exactly)
            except (codec.CodecError, OSError):
                break
            if self._on_envelope is not None:
                self._on_envelope(envelope)
            else:
                with self._pending_cond:
                    self._pending.append(envelope)
                    self._pending_cond.notify_all()

    def send(self, envelope: Envelope) -> None:
        with self._send_lock:
            self._sock.sendall(codec.encode(envelope))

    def receive(self, timeout: float = 30.0) -> Envelope:
        with self._pending_cond:
            if not self._pending:
                self._pending_cond.wait(timeout=timeout)
            if not self._pending:
                raise TransportError("timed out waiting for a reply")
            return self._pending.pop(0)

    def request(self, envelope: Envelope, timeout: float = 30.0) -> Envelope:
        self.send(envelope)
        return self.receive(timeout=timeout)

    def close(self) -> None:
        self._closed = True
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


def connect_tcp(address: str, on_envelope: Callable[[Envelope], None] | None = None) -> TcpConnection:
    return TcpConnection(address, on_envelope)
