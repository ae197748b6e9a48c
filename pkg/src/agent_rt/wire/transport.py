"""Persistent TCP session (host side) and a mock inference server."""

from __future__ import annotations

import logging
import socket
import socketserver
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Protocol

from ..grammar import ModelTurn, tokenize_action
from .protocol import (
    PROTOCOL_VERSION, ChunkMessage, DecodeError, ErrorMessage, FrameDecoder, Hello,
    InferenceRequest, Message, ObservationFrame, ProtocolError, Reassembler,
    ReasoningMessage, RemoteError, SeqMismatch, StreamTruncated, encode_message,
    stream_chunks,
)

log = logging.getLogger(__name__)


class ConnectRefused(ProtocolError):
    pass


class HandshakeTimeout(ProtocolError):
    pass


class SessionClosed(ProtocolError):
    pass


def _nodelay(sock: socket.socket) -> None:
    # Chunks are tiny and latency-critical; Nagle would hold them back.
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)


class MessageChannel:
    """Blocking length-prefixed message I/O over a connected socket."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.decoder = FrameDecoder()
        self.inbox: list[Message] = []
        self.bytes_sent = 0
        self.bytes_received = 0

    def send(self, msg: Message) -> None:
        data = encode_message(msg)
        try:
            self.sock.sendall(data)
        except OSError as exc:
            raise SessionClosed(f"send failed: {exc}") from exc
        self.bytes_sent += len(data)

    def recv(self) -> Message:
        while not self.inbox:
            try:
                data = self.sock.recv(1 << 16)
            except socket.timeout:
                raise
            except OSError as exc:
                raise SessionClosed(f"receive failed: {exc}") from exc
            if not data:
                raise SessionClosed("peer closed the connection")
            self.bytes_received += len(data)
            self.inbox.extend(self.decoder.feed(data))
        return self.inbox.pop(0)


@dataclass
class TurnResult:
    seq: int
    reasoning: Optional[str]
    chunks: list[ChunkMessage]
    text: str
    chunk_times: list[float] = field(default_factory=list)


class Session:
    """One long-lived connection to the inference server.

    In lockstep mode at most one request is in flight; pipelined mode allows
    several, answered in seq order.
    """

    def __init__(self, sock: socket.socket, heartbeat_interval: Optional[float] = None,
                 lockstep: bool = True):
        self.channel = MessageChannel(sock)
        self.heartbeat_interval = heartbeat_interval
        self.lockstep = lockstep
        self.connects = 1
        self.closed = False
        self.in_flight: list[int] = []
        self.last_sent_seq: Optional[int] = None
        self.last_activity = time.monotonic()

    def _ensure_open(self):
        if self.closed:
            raise SessionClosed("session is closed")

    def heartbeat(self) -> None:
        self._ensure_open()
        self.channel.send(Hello(PROTOCOL_VERSION, ping=True))
        reply = self.channel.recv()
        if not isinstance(reply, Hello):
            raise ProtocolError(f"expected HELLO reply to ping, got {type(reply).__name__}")
        self.last_activity = time.monotonic()

    def send_request(self, frame: ObservationFrame, context_hint: Optional[str] = None) -> None:
        self._ensure_open()
        request = InferenceRequest.from_frame(frame, context_hint)
        if self.last_sent_seq is not None and frame.seq <= self.last_sent_seq:
            raise SeqMismatch(f"seq {frame.seq} does not increase past {self.last_sent_seq}")
        if self.lockstep and self.in_flight:
            raise ProtocolError(f"request {self.in_flight[0]} still in flight (lockstep mode)")
        if (self.heartbeat_interval is not None and not self.in_flight
                and time.monotonic() - self.last_activity > self.heartbeat_interval):
            self.heartbeat()
        self.channel.send(request)
        self.in_flight.append(frame.seq)
        self.last_sent_seq = frame.seq
        self.last_activity = time.monotonic()

    def receive(self) -> Iterator[Message]:
        """Yield the reasoning and chunk messages answering the oldest request."""
        self._ensure_open()
        if not self.in_flight:
            raise ProtocolError("no request in flight")
        seq = self.in_flight[0]
        while True:
            msg = self.channel.recv()
            if isinstance(msg, ErrorMessage):
                self.in_flight.pop(0)
                if msg.code == "StreamTruncated":
                    raise StreamTruncated(msg.detail)
                raise RemoteError(msg.code, msg.detail)
            if isinstance(msg, (ChunkMessage, ReasoningMessage)) and msg.seq != seq:
                raise SeqMismatch(f"got seq {msg.seq}, expected {seq}")
            yield msg
            if isinstance(msg, ChunkMessage) and msg.terminal:
                self.in_flight.pop(0)
                self.last_activity = time.monotonic()
                return

    def collect(self) -> TurnResult:
        seq = self.in_flight[0] if self.in_flight else -1
        asm = Reassembler(seq)
        reasoning = None
        chunks: list[ChunkMessage] = []
        times: list[float] = []
        text = None
        for msg in self.receive():
            if isinstance(msg, ReasoningMessage):
                reasoning = msg.text
                continue
            chunks.append(msg)
            times.append(time.monotonic())
            text = asm.feed(msg)
        return TurnResult(seq, reasoning, chunks, text or "", times)

    def request(self, frame: ObservationFrame, context_hint: Optional[str] = None) -> TurnResult:
        self.send_request(frame, context_hint)
        return self.collect()

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            try:
                self.channel.sock.close()
            except OSError:
                pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def open_session(host: str, port: int, timeout: float = 2.0,
                 heartbeat_interval: Optional[float] = None, lockstep: bool = True) -> Session:
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except (ConnectionRefusedError, socket.timeout, OSError) as exc:
        raise ConnectRefused(f"cannot connect to {host}:{port}: {exc}") from exc
    _nodelay(sock)
    session = Session(sock, heartbeat_interval, lockstep)
    hb_ms = None if heartbeat_interval is None else int(heartbeat_interval * 1000)
    try:
        session.channel.send(Hello(PROTOCOL_VERSION, hb_ms))
        reply = session.channel.recv()
    except socket.timeout as exc:
        session.close()
        raise HandshakeTimeout(f"no HELLO from {host}:{port} within {timeout}s") from exc
    except SessionClosed as exc:
        session.close()
        raise ConnectRefused(f"{host}:{port} closed during handshake") from exc
    if not isinstance(reply, Hello) or reply.version != PROTOCOL_VERSION:
        session.close()
        raise ProtocolError(f"bad handshake reply {reply!r}")
    sock.settimeout(None)
    return session


# -- mock server --------------------------------------------------------------

class Responder(Protocol):
    def __call__(self, seq: int, image: bytes) -> ModelTurn: ...


@dataclass
class ServerStats:
    connections: int = 0
    requests: int = 0
    # (seq, chunk index, monotonic time the delimiter was produced)
    emitted: list[tuple[int, int, float]] = field(default_factory=list)
    record_emits: bool = False


class _Handler(socketserver.BaseRequestHandler):
    server: "MockInferenceServer"

    def handle(self):
        srv = self.server
        with srv.lock:
            srv.stats.connections += 1
        _nodelay(self.request)
        channel = MessageChannel(self.request)
        while True:
            try:
                msg = channel.recv()
            except SessionClosed:
                return
            except DecodeError as exc:
                channel.send(ErrorMessage(None, "BadMessage", str(exc)))
                return
            if isinstance(msg, Hello):
                channel.send(Hello(PROTOCOL_VERSION, msg.heartbeat_ms, ping=msg.ping))
            elif isinstance(msg, InferenceRequest):
                srv.stats.requests += 1
                try:
                    self._answer(channel, msg)
                except SessionClosed:
                    return
            else:
                channel.send(ErrorMessage(None, "Unexpected", type(msg).__name__))

    def _answer(self, channel: MessageChannel, req: InferenceRequest):
        srv = self.server
        try:
            image = req.image()
        except DecodeError as exc:
            channel.send(ErrorMessage(req.seq, "BadImage", str(exc)))
            return
        turn = srv.responder(req.seq, image)
        if turn.reasoning is not None:
            channel.send(ReasoningMessage(req.seq, turn.reasoning))
        tokens = srv.token_source(turn)
        try:
            for msg in stream_chunks(req.seq, _paced(tokens, srv.token_delay)):
                if srv.stats.record_emits:
                    srv.stats.emitted.append((msg.seq, msg.index, time.monotonic()))
                channel.send(msg)
        except StreamTruncated as exc:
            channel.send(ErrorMessage(req.seq, "StreamTruncated", str(exc)))


def _paced(tokens, delay: float):
    for tok in tokens:
        if delay:
            time.sleep(delay)
        yield tok


class MockInferenceServer(socketserver.ThreadingTCPServer):
    """Serves scripted turns over the wire protocol.

    ``responder`` maps ``(seq, image bytes)`` to a turn; ``token_source`` maps
    the turn to the token stream (override it to inject truncation).
    """

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, responder: Responder, host: str = "127.0.0.1", port: int = 0,
                 token_delay: float = 0.0,
                 token_source: Optional[Callable[[ModelTurn], list[str]]] = None):
        super().__init__((host, port), _Handler)
        self.responder = responder
        self.token_delay = token_delay
        self.token_source = token_source or (lambda turn: tokenize_action(turn.action))
        self.stats = ServerStats()
        self.lock = threading.Lock()
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[:2]

    def start(self) -> "MockInferenceServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
