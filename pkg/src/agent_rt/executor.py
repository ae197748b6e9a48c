"""Lowering of actions into timed key/mouse events and the keyboard state machine.

Six chunk boundaries are placed at ``floor(200 * i / 6)`` ms, i.e.
0, 33, 66, 100, 133 and 166. At each boundary keys missing from the new chunk
are released, new keys are pressed and keys present in both stay down. Mouse
motion and scroll are spread over the same boundaries.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Optional

from .grammar import EMPTY_CHUNK, NUM_CHUNKS, ActionSequence, KeyChunk

ACTION_MS = 200
BOUNDARIES_MS: tuple[int, ...] = tuple(ACTION_MS * i // NUM_CHUNKS for i in range(NUM_CHUNKS))


class IllegalTransition(RuntimeError):
    """A key-down for a held key or a key-up for a released one."""


class EventKind(str, enum.Enum):
    KEY_UP = "key-up"
    KEY_DOWN = "key-down"
    MOUSE_MOVE = "mouse-move"
    SCROLL = "scroll"


@dataclass(frozen=True)
class TimedEvent:
    at: int
    kind: EventKind
    key: Optional[str] = None
    dx: int = 0
    dy: int = 0
    dz: int = 0

    def to_record(self) -> dict:
        rec: dict = {"at_ms": self.at, "kind": self.kind.value}
        if self.kind in (EventKind.KEY_UP, EventKind.KEY_DOWN):
            rec["key"] = self.key
        elif self.kind is EventKind.MOUSE_MOVE:
            rec["dx"], rec["dy"] = self.dx, self.dy
        else:
            rec["dz"] = self.dz
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "TimedEvent":
        kind = EventKind(rec["kind"])
        return cls(
            at=int(rec["at_ms"]), kind=kind, key=rec.get("key"),
            dx=int(rec.get("dx", 0)), dy=int(rec.get("dy", 0)), dz=int(rec.get("dz", 0)),
        )


@dataclass
class EventStream:
    events: list[TimedEvent] = field(default_factory=list)

    def __iter__(self) -> Iterator[TimedEvent]:
        return iter(self.events)

    def __len__(self):
        return len(self.events)

    def key_events(self) -> list[TimedEvent]:
        return [e for e in self.events if e.kind in (EventKind.KEY_UP, EventKind.KEY_DOWN)]

    def mouse_total(self) -> tuple[int, int]:
        moves = [e for e in self.events if e.kind is EventKind.MOUSE_MOVE]
        return sum(e.dx for e in moves), sum(e.dy for e in moves)

    def scroll_total(self) -> int:
        return sum(e.dz for e in self.events if e.kind is EventKind.SCROLL)

    def shifted(self, offset_ms: int) -> "EventStream":
        return EventStream([
            TimedEvent(e.at + offset_ms, e.kind, e.key, e.dx, e.dy, e.dz) for e in self.events
        ])


@dataclass(frozen=True)
class KeyboardState:
    held: frozenset[str] = frozenset()


def diff_chunks(prev: KeyChunk, next: KeyChunk) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Return ``(presses, releases)`` for the transition ``prev -> next``.

    Ordering follows the order keys are written in their chunk so the output is
    deterministic.
    """
    presses = tuple(k for k in next.keys if k not in prev.keyset)
    releases = tuple(k for k in prev.keys if k not in next.keyset)
    return presses, releases


def split_evenly(total: int, parts: int = NUM_CHUNKS) -> list[int]:
    """Integer split of ``total`` with the remainder on the earliest parts.

    >>> split_evenly(7)
    [2, 1, 1, 1, 1, 1]
    """
    sign = -1 if total < 0 else 1
    q, r = divmod(abs(total), parts)
    return [sign * (q + (1 if i < r else 0)) for i in range(parts)]


def lower_action(action: ActionSequence, prev_tail: KeyChunk = EMPTY_CHUNK) -> EventStream:
    """Lower one action into timed events.

    ``prev_tail`` is the last chunk of the previously executed action; keys it
    holds stay down into chunk 1 unless omitted there.
    """
    sub_dx = split_evenly(action.mouse.dx)
    sub_dy = split_evenly(action.mouse.dy)
    dz = action.mouse.dz
    scroll_sign = -1 if dz < 0 else 1
    events: list[TimedEvent] = []
    prev = prev_tail
    for i, (at, chunk) in enumerate(zip(BOUNDARIES_MS, action.chunks)):
        presses, releases = diff_chunks(prev, chunk)
        events.extend(TimedEvent(at, EventKind.KEY_UP, key=k) for k in releases)
        events.extend(TimedEvent(at, EventKind.KEY_DOWN, key=k) for k in presses)
        if sub_dx[i] or sub_dy[i]:
            events.append(TimedEvent(at, EventKind.MOUSE_MOVE, dx=sub_dx[i], dy=sub_dy[i]))
        if i < abs(dz):
            events.append(TimedEvent(at, EventKind.SCROLL, dz=scroll_sign))
        prev = chunk
    return EventStream(events)


def lower_actions(actions: Iterable[ActionSequence], prev_tail: KeyChunk = EMPTY_CHUNK,
                  period_ms: int = ACTION_MS) -> EventStream:
    """Lower consecutive actions onto one timeline, threading the held keys."""
    out: list[TimedEvent] = []
    for n, action in enumerate(actions):
        out.extend(lower_action(action, prev_tail).shifted(n * period_ms))
        prev_tail = action.chunks[-1]
    return EventStream(out)


def apply_event(state: KeyboardState, event: TimedEvent) -> KeyboardState:
    if event.kind is EventKind.KEY_DOWN:
        if event.key in state.held:
            raise IllegalTransition(f"key-down for held key {event.key} at {event.at} ms")
        return KeyboardState(state.held | {event.key})
    if event.kind is EventKind.KEY_UP:
        if event.key not in state.held:
            raise IllegalTransition(f"key-up for released key {event.key} at {event.at} ms")
        return KeyboardState(state.held - {event.key})
    return state


class VirtualClock:
    """Monotone millisecond clock advanced explicitly by its owner."""

    def __init__(self, start: float = 0.0):
        self.now = start

    def advance_to(self, t: float) -> None:
        if t < self.now:
            raise ValueError(f"clock cannot go backwards ({t} < {self.now})")
        self.now = t


@dataclass(frozen=True)
class TraceRow:
    at: float
    state: KeyboardState
    mouse: tuple[int, int]
    scroll: int


def replay(stream: EventStream, clock: Optional[VirtualClock] = None,
           initial: KeyboardState = KeyboardState()) -> list[TraceRow]:
    """Drive the keyboard state machine through ``stream``.

    The trace has one row for the initial state (at the clock's current time)
    and one row after every event.
    """
    clock = clock or VirtualClock()
    state = initial
    mx = my = mz = 0
    trace = [TraceRow(clock.now, state, (0, 0), 0)]
    for event in stream:
        clock.advance_to(event.at)
        state = apply_event(state, event)
        if event.kind is EventKind.MOUSE_MOVE:
            mx += event.dx
            my += event.dy
        elif event.kind is EventKind.SCROLL:
            mz += event.dz
        trace.append(TraceRow(clock.now, state, (mx, my), mz))
    return trace


def held_at(trace: list[TraceRow], t: float) -> frozenset[str]:
    """Held set after all events at or before ``t``."""
    held = trace[0].state.held
    for row in trace[1:]:
        if row.at > t:
            break
        held = row.state.held
    return held


def write_jsonl(stream: EventStream, fh: IO[str]) -> None:
    for event in stream:
        fh.write(json.dumps(event.to_record(), separators=(",", ":")) + "\n")


def read_jsonl(fh: IO[str]) -> EventStream:
    return EventStream([TimedEvent.from_record(json.loads(line)) for line in fh if line.strip()])
