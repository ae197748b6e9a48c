"""Message codec and chunk streaming for the host/server link.

Every message is a 4-byte big-endian length followed by a UTF-8 JSON object
with sorted keys and no insignificant whitespace, so equal messages always
encode to equal bytes. See ``docs/wire.md`` for the message catalogue.
"""

from __future__ import annotations

import base64
import binascii
import io
import json
import struct
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Union

import numpy as np
from PIL import Image

from ..grammar import END, ActionSequence, parse_action
from ..specdecode import START, IllegalToken, advance_stage, is_boundary

PROTOCOL_VERSION = 1
FRAME_WIDTH = 1280
FRAME_HEIGHT = 720
JPEG_QUALITY = 85
MAX_MESSAGE_BYTES = 64 * 1024 * 1024
SEQ_MAX = 2 ** 64 - 1
_HEADER = struct.Struct(">I")

HELLO = "HELLO"
OBS = "OBS"
REASONING = "REASONING"
CHUNK = "CHUNK"
ERR = "ERR"
MESSAGE_TYPES = (HELLO, OBS, REASONING, CHUNK, ERR)


class ProtocolError(Exception):
    pass


class EncodeError(ProtocolError):
    pass


class DecodeError(ProtocolError):
    pass


class StreamTruncated(ProtocolError):
    pass


class SeqMismatch(ProtocolError):
    pass


class RemoteError(ProtocolError):
    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code
        self.detail = detail


def _check_seq(seq: int) -> int:
    if not isinstance(seq, int) or not 0 <= seq <= SEQ_MAX:
        raise EncodeError(f"seq {seq!r} is not an unsigned 64-bit integer")
    return seq


# -- frames -------------------------------------------------------------------

def encode_jpeg(pixels: np.ndarray, quality: int = JPEG_QUALITY) -> bytes:
    """JPEG-encode an ``(H, W, 3)`` uint8 array."""
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8), "RGB").save(
        buf, format="JPEG", quality=quality)
    return buf.getvalue()


def decode_jpeg(data: bytes) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(data)) as im:
            return np.asarray(im.convert("RGB"))
    except (OSError, ValueError) as exc:
        raise DecodeError(f"cannot decode image: {exc}") from exc


def jpeg_size(data: bytes) -> tuple[int, int]:
    try:
        with Image.open(io.BytesIO(data)) as im:
            if im.format != "JPEG":
                raise EncodeError(f"expected JPEG, got {im.format}")
            return im.size
    except (OSError, ValueError) as exc:
        raise EncodeError(f"not a decodable image: {exc}") from exc


@dataclass(frozen=True)
class ObservationFrame:
    seq: int
    captured_at: float
    image: bytes

    def validate(self) -> None:
        _check_seq(self.seq)
        size = jpeg_size(self.image)
        if size != (FRAME_WIDTH, FRAME_HEIGHT):
            raise EncodeError(f"frame is {size[0]}x{size[1]}, expected {FRAME_WIDTH}x{FRAME_HEIGHT}")


# -- messages -----------------------------------------------------------------

@dataclass(frozen=True)
class Hello:
    version: int = PROTOCOL_VERSION
    heartbeat_ms: Optional[int] = None
    ping: bool = False

    def body(self) -> dict:
        return {"type": HELLO, "version": self.version, "heartbeat_ms": self.heartbeat_ms,
                "ping": self.ping}


@dataclass(frozen=True)
class InferenceRequest:
    seq: int
    image_b64: str
    captured_at: float = 0.0
    context_hint: Optional[str] = None

    @classmethod
    def from_frame(cls, frame: ObservationFrame, context_hint: Optional[str] = None):
        frame.validate()
        return cls(frame.seq, base64.b64encode(frame.image).decode("ascii"),
                   frame.captured_at, context_hint)

    def image(self) -> bytes:
        try:
            return base64.b64decode(self.image_b64, validate=True)
        except binascii.Error as exc:
            raise DecodeError(f"bad base64 image: {exc}") from exc

    def body(self) -> dict:
        return {"type": OBS, "seq": _check_seq(self.seq), "image_b64": self.image_b64,
                "captured_at": self.captured_at, "context_hint": self.context_hint}


@dataclass(frozen=True)
class ReasoningMessage:
    seq: int
    text: str
    # Marks the end of the reasoning phase; chunk 0 follows.
    terminal: bool = True

    def body(self) -> dict:
        return {"type": REASONING, "seq": _check_seq(self.seq), "text": self.text,
                "terminal": self.terminal}


@dataclass(frozen=True)
class ChunkMessage:
    seq: int
    index: int
    payload: str
    terminal: bool = False

    def body(self) -> dict:
        return {"type": CHUNK, "seq": _check_seq(self.seq), "index": self.index,
                "payload": self.payload, "terminal": self.terminal}


@dataclass(frozen=True)
class ErrorMessage:
    seq: Optional[int]
    code: str
    detail: str = ""

    def body(self) -> dict:
        return {"type": ERR, "seq": self.seq, "code": self.code, "detail": self.detail}


Message = Union[Hello, InferenceRequest, ReasoningMessage, ChunkMessage, ErrorMessage]


def encode_message(msg: Message) -> bytes:
    body = json.dumps(msg.body(), sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False).encode("utf-8")
    if len(body) > MAX_MESSAGE_BYTES:
        raise EncodeError(f"message of {len(body)} bytes exceeds limit")
    return _HEADER.pack(len(body)) + body


def message_from_body(body: dict) -> Message:
    kind = body.get("type")
    try:
        if kind == HELLO:
            return Hello(body["version"], body.get("heartbeat_ms"), bool(body.get("ping", False)))
        if kind == OBS:
            return InferenceRequest(body["seq"], body["image_b64"], body.get("captured_at", 0.0),
                                    body.get("context_hint"))
        if kind == REASONING:
            return ReasoningMessage(body["seq"], body["text"], body.get("terminal", True))
        if kind == CHUNK:
            return ChunkMessage(body["seq"], body["index"], body["payload"], body["terminal"])
        if kind == ERR:
            return ErrorMessage(body.get("seq"), body["code"], body.get("detail", ""))
    except KeyError as exc:
        raise DecodeError(f"{kind} message missing field {exc}") from exc
    raise DecodeError(f"unknown message type {kind!r}")


def decode_body(data: bytes) -> Message:
    try:
        body = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DecodeError(f"bad message body: {exc}") from exc
    if not isinstance(body, dict):
        raise DecodeError("message body is not an object")
    return message_from_body(body)


class FrameDecoder:
    """Incremental decoder for a byte stream of length-prefixed messages."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[Message]:
        self._buf.extend(data)
        out = []
        while len(self._buf) >= _HEADER.size:
            (n,) = _HEADER.unpack_from(self._buf)
            if n > MAX_MESSAGE_BYTES:
                raise DecodeError(f"declared length {n} exceeds limit")
            if len(self._buf) < _HEADER.size + n:
                break
            body = bytes(self._buf[_HEADER.size:_HEADER.size + n])
            del self._buf[:_HEADER.size + n]
            out.append(decode_body(body))
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)


# -- chunk streaming ----------------------------------------------------------

def detect_chunk_boundary(stage, token: str) -> bool:
    return is_boundary(stage, token)


def stream_chunks(seq: int, tokens: Iterable[str]) -> Iterator[ChunkMessage]:
    """Turn a decoder token stream into chunk messages as chunks complete.

    A message is yielded as soon as its delimiter arrives. If the source ends
    before the action-end token, :class:`StreamTruncated` is raised after the
    completed chunks have been yielded.
    """
    stage = START
    buf: list[str] = []
    for tok in tokens:
        boundary = is_boundary(stage, tok)
        index = stage.phase.chunk_index
        stage = advance_stage(stage, tok)
        if tok != END:
            buf.append(tok)
        if boundary:
            yield ChunkMessage(seq, index, "".join(buf), terminal=stage.done)
            buf = []
    if not stage.done:
        raise StreamTruncated(f"token source ended in {stage.phase.name} for seq {seq}")


class Reassembler:
    """Host-side, order-checked reassembly of one action's chunks."""

    def __init__(self, seq: int):
        self.seq = seq
        self.parts: list[str] = []
        self.done = False

    def feed(self, msg: ChunkMessage) -> Optional[str]:
        if msg.seq != self.seq:
            raise SeqMismatch(f"chunk for seq {msg.seq} while assembling {self.seq}")
        if self.done:
            raise ProtocolError(f"chunk after terminal for seq {self.seq}")
        if msg.index != len(self.parts):
            raise ProtocolError(f"chunk index {msg.index}, expected {len(self.parts)}")
        if msg.terminal != (msg.index == 6):
            raise ProtocolError(f"terminal flag {msg.terminal} on chunk {msg.index}")
        self.parts.append(msg.payload)
        if msg.terminal:
            self.done = True
            return "".join(self.parts)
        return None

    def action(self) -> ActionSequence:
        if not self.done:
            raise StreamTruncated(f"seq {self.seq} incomplete")
        return parse_action("".join(self.parts))

