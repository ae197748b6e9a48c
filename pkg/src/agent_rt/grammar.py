"""Textual keyboard/mouse action language and turn framing.

An action covers one 200 ms control step::

    dx dy dz ; K1 ; K2 ; K3 ; K4 ; K5 ; K6

``dx``/``dy`` are relative mouse displacements, ``dz`` is a scroll step count
and each ``Ki`` is a chunk of zero to four held keys. A model turn wraps the
action in ``<|action_start|>``/``<|action_end|>``, optionally preceded by a
``<|thought_start|>...<|thought_end|>`` reasoning block.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

ACTION_START = "<|action_start|>"
ACTION_END = "<|action_end|>"
THOUGHT_START = "<|thought_start|>"
THOUGHT_END = "<|thought_end|>"
IM_START = "<|im_start|>"
IM_END = "<|im_end|>"

NUM_CHUNKS = 6
MAX_KEYS_PER_CHUNK = 4
MOUSE_LIMIT = 999
SCROLL_LIMIT = 5

# Canonical key name -> single-token vocabulary spelling.
KEY_TOKENS: dict[str, str] = {
    "LMB": "LB", "RMB": "RB", "MMB": "MB",
    "0": "zero", "1": "one", "2": "two", "3": "three", "4": "four",
    "5": "five", "6": "six", "7": "seven", "8": "eight", "9": "nine",
    **{chr(c): chr(c) for c in range(ord("A"), ord("Z") + 1)},
    "F1": "One", "F2": "Two", "F3": "Three", "F4": "Four", "F5": "Five",
    "F6": "Six", "F7": "Seven", "F8": "Eight", "F9": "Nine", "F10": "Ten",
    "F11": "Eleven", "F12": "Twelve",
    "Esc": "Esc", "Tab": "Tab", "Caps": "Caps", "Shift": "Shift",
    "Ctrl": "Ctrl", "Alt": "Alt", "Space": "Space",
}
KEYS: frozenset[str] = frozenset(KEY_TOKENS)
# The parser also accepts the vocabulary spelling (e.g. "LB" for LMB).
_ALIASES: dict[str, str] = {tok: name for name, tok in KEY_TOKENS.items()}


class GrammarError(ValueError):
    pass


class MalformedMouse(GrammarError):
    pass


class RangeError(GrammarError):
    pass


class ChunkCountError(GrammarError):
    pass


class UnknownKey(GrammarError):
    pass


class TooManyKeys(GrammarError):
    pass


class DuplicateKey(GrammarError):
    pass


class TurnError(GrammarError):
    pass


class UnbalancedMarkers(TurnError):
    pass


class ActionMissing(TurnError):
    pass


class ReasoningAfterAction(TurnError):
    pass


class EmptyReasoning(TurnError):
    pass


def canonical_key(name: str) -> str:
    """Map a key name or its vocabulary alias to the canonical name."""
    if name in KEYS:
        return name
    if name in _ALIASES:
        return _ALIASES[name]
    raise UnknownKey(f"unknown key {name!r}")


@dataclass(frozen=True)
class MouseDelta:
    dx: int = 0
    dy: int = 0
    dz: int = 0

    def __post_init__(self):
        for axis, value, limit in (("dx", self.dx, MOUSE_LIMIT),
                                   ("dy", self.dy, MOUSE_LIMIT),
                                   ("dz", self.dz, SCROLL_LIMIT)):
            if not isinstance(value, int) or isinstance(value, bool):
                raise MalformedMouse(f"{axis} must be an integer, got {value!r}")
            if not -limit <= value <= limit:
                raise RangeError(f"{axis}={value} outside [-{limit}, {limit}]")

    @property
    def is_zero(self) -> bool:
        return self.dx == 0 and self.dy == 0 and self.dz == 0


@dataclass(frozen=True, eq=False)
class KeyChunk:
    """Keys held during one 33 ms slice.

    Written order is kept for serialization; equality and hashing treat the
    chunk as a set.
    """

    keys: tuple[str, ...] = ()

    def __post_init__(self):
        keys = tuple(canonical_key(k) for k in self.keys)
        if len(set(keys)) != len(keys):
            raise DuplicateKey(f"duplicate key in chunk {keys}")
        if len(keys) > MAX_KEYS_PER_CHUNK:
            raise TooManyKeys(f"{len(keys)} keys in chunk, at most {MAX_KEYS_PER_CHUNK}")
        object.__setattr__(self, "keys", keys)

    @classmethod
    def of(cls, *keys: str) -> "KeyChunk":
        return cls(tuple(keys))

    @property
    def keyset(self) -> frozenset[str]:
        return frozenset(self.keys)

    def __eq__(self, other):
        if not isinstance(other, KeyChunk):
            return NotImplemented
        return self.keyset == other.keyset

    def __hash__(self):
        return hash(self.keyset)

    def __len__(self):
        return len(self.keys)

    def __iter__(self):
        return iter(self.keys)

    def __contains__(self, key):
        return key in self.keys


EMPTY_CHUNK = KeyChunk()


@dataclass(frozen=True)
class ActionSequence:
    mouse: MouseDelta = field(default_factory=MouseDelta)
    chunks: tuple[KeyChunk, ...] = (EMPTY_CHUNK,) * NUM_CHUNKS

    def __post_init__(self):
        chunks = tuple(c if isinstance(c, KeyChunk) else KeyChunk(tuple(c)) for c in self.chunks)
        if len(chunks) != NUM_CHUNKS:
            raise ChunkCountError(f"expected {NUM_CHUNKS} chunks, got {len(chunks)}")
        object.__setattr__(self, "chunks", chunks)

    @classmethod
    def noop(cls) -> "ActionSequence":
        return cls()

    @property
    def is_idle(self) -> bool:
        return self.mouse.is_zero and all(len(c) == 0 for c in self.chunks)

    def __str__(self):
        return serialize_action(self)


class TurnMode(enum.Enum):
    THINKING = "thinking"
    NON_THINKING = "non-thinking"


@dataclass(frozen=True)
class ModelTurn:
    action: ActionSequence
    reasoning: Optional[str] = None

    def __post_init__(self):
        if self.reasoning is not None and not self.reasoning.strip():
            raise EmptyReasoning("a thinking turn needs non-empty reasoning")

    @property
    def mode(self) -> TurnMode:
        return TurnMode.THINKING if self.reasoning is not None else TurnMode.NON_THINKING

    @property
    def thinking(self) -> bool:
        return self.reasoning is not None


_INT_RE = re.compile(r"-?\d+\Z")


def _parse_int(text: str) -> int:
    if not _INT_RE.match(text):
        raise MalformedMouse(f"not an integer: {text!r}")
    return int(text)


def _strip_action_markers(text: str) -> str:
    body = text.strip()
    if body.startswith(ACTION_START):
        body = body[len(ACTION_START):]
    if body.endswith(ACTION_END):
        body = body[: -len(ACTION_END)]
    return body


def parse_action(text: str) -> ActionSequence:
    """Parse action content, with or without the action markers.

    Any run of whitespace is accepted between fields and around semicolons.
    """
    parts = _strip_action_markers(text).split(";")
    fields = parts[0].split()
    if len(fields) != 3:
        raise MalformedMouse(f"mouse component needs 3 integers, got {parts[0].strip()!r}")
    dx, dy, dz = (_parse_int(f) for f in fields)
    mouse = MouseDelta(dx, dy, dz)
    if len(parts) - 1 != NUM_CHUNKS:
        raise ChunkCountError(f"expected {NUM_CHUNKS} key chunks, got {len(parts) - 1}")
    chunks = tuple(KeyChunk(tuple(p.split())) for p in parts[1:])
    return ActionSequence(mouse, chunks)


def serialize_action(action: ActionSequence) -> str:
    m = action.mouse
    words = [f"{m.dx} {m.dy} {m.dz}"]
    for chunk in action.chunks:
        words.append(";")
        words.extend(chunk.keys)
    return " ".join(words)


def canonicalize(text: str) -> str:
    """Canonical form of an action string (parse, then serialize)."""
    return serialize_action(parse_action(text))


def format_turn(turn: ModelTurn) -> str:
    """Assistant message body for a turn, without chat-role wrappers."""
    action = f"{ACTION_START}{serialize_action(turn.action)}{ACTION_END}"
    if turn.reasoning is None:
        return action
    return f"{THOUGHT_START}{turn.reasoning}{THOUGHT_END}{action}"


_MARKER_RE = re.compile(
    "|".join(re.escape(m) for m in (THOUGHT_START, THOUGHT_END, ACTION_START, ACTION_END))
)
_ROLE_PREFIX_RE = re.compile(re.escape(IM_START) + r"assistant\s*")


def parse_turn(text: str) -> ModelTurn:
    """Parse one assistant message into a :class:`ModelTurn`.

    Accepts an optional ``<|im_start|>assistant`` prefix and ``<|im_end|>``
    suffix. The first marker decides the mode. Only two layouts are legal:
    thought block then action block, or an action block alone.
    """
    body = text.strip()
    role = _ROLE_PREFIX_RE.match(body)
    if role:
        body = body[role.end():]
    if body.endswith(IM_END):
        body = body[: -len(IM_END)]

    markers = [(m.group(), m.start(), m.end()) for m in _MARKER_RE.finditer(body)]
    names = [m[0] for m in markers]

    seen_action = False
    for name in names:
        if name in (ACTION_START, ACTION_END):
            seen_action = True
        elif seen_action:
            raise ReasoningAfterAction("thought block appears after the action block")

    if names == [ACTION_START, ACTION_END]:
        layout_ok, reasoning = True, None
    elif names == [THOUGHT_START, THOUGHT_END, ACTION_START, ACTION_END]:
        layout_ok = True
        reasoning = body[markers[0][2]: markers[1][1]].strip()
        if not reasoning:
            raise EmptyReasoning("thought block is empty")
    else:
        layout_ok = False

    if not layout_ok:
        if names in ([], [THOUGHT_START, THOUGHT_END]):
            raise ActionMissing("no action block in turn")
        raise UnbalancedMarkers(f"marker sequence {names} is not a legal turn layout")

    # Text outside the blocks must be whitespace only.
    outside = [body[: markers[0][1]], body[markers[-1][2]:]]
    if reasoning is not None:
        outside.append(body[markers[1][2]: markers[2][1]])
    if any(chunk.strip() for chunk in outside):
        raise UnbalancedMarkers("stray text outside marker blocks")

    action = parse_action(body[markers[-2][2]: markers[-1][1]])
    return ModelTurn(action, reasoning)


# -- canonical token stream ---------------------------------------------------

SPACE = " "
SEMI = " ;"
END = ACTION_END


def key_token(key: str) -> str:
    """Token for one key press; the preceding space is folded into the token."""
    return " " + key


def is_key_token(token: str) -> bool:
    return len(token) > 1 and token[0] == " " and token[1:] in KEYS


def is_number_token(token: str) -> bool:
    return bool(_INT_RE.match(token))


def tokenize_action(action: ActionSequence) -> list[str]:
    """Canonical token stream for an action.

    One token per integer field, one per delimiter (space between mouse fields,
    semicolon, action end) and one per key. Concatenating the token texts, with
    the end marker contributing nothing, gives :func:`serialize_action`.
    """
    m = action.mouse
    tokens = [str(m.dx), SPACE, str(m.dy), SPACE, str(m.dz), SEMI]
    for i, chunk in enumerate(action.chunks):
        tokens.extend(key_token(k) for k in chunk.keys)
        tokens.append(END if i == NUM_CHUNKS - 1 else SEMI)
    return tokens


def token_count(action: ActionSequence) -> int:
    """3 numbers + 2 spaces + 7 delimiters + one token per key."""
    return 12 + sum(len(c) for c in action.chunks)


def detokenize(tokens: Iterable[str]) -> str:
    return "".join(t for t in tokens if t != END)


def vocab_spelling(tokens: Sequence[str]) -> list[str]:
    """Render key tokens in the single-token vocabulary form (``Ġ`` + spelling)."""
    out = []
    for t in tokens:
        if is_key_token(t):
            out.append("Ġ" + KEY_TOKENS[t[1:]])
        else:
            out.append(t)
    return out
