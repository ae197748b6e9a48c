"""Frame-action pairs and training-sample assembly."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Optional, Sequence

from ..grammar import ActionSequence, KeyChunk, MouseDelta, parse_action, serialize_action
from .logs import Diagnostics
from .mouse import OVERWORLD

SCHEMA_VERSION = 1
HISTORY_WINDOW = 20
KINDS = ("pretrain", "instruct", "reasoning")


@dataclass(frozen=True)
class FrameRef:
    path: str
    index: int


@dataclass(frozen=True)
class FrameActionPair:
    frame: FrameRef
    ts: float
    mouse: MouseDelta
    chunks: tuple[KeyChunk, ...]
    scene: str = OVERWORLD

    @property
    def action(self) -> ActionSequence:
        return ActionSequence(self.mouse, self.chunks)

    @property
    def idle(self) -> bool:
        return self.mouse.is_zero and all(len(c) == 0 for c in self.chunks)

    def to_record(self) -> dict:
        return {
            "frame": {"path": self.frame.path, "index": self.frame.index},
            "ts_ms": self.ts,
            "action": serialize_action(self.action),
            "scene": self.scene,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "FrameActionPair":
        action = parse_action(rec["action"])
        return cls(FrameRef(rec["frame"]["path"], rec["frame"]["index"]), rec["ts_ms"],
                   action.mouse, action.chunks, rec.get("scene", OVERWORLD))


@dataclass(frozen=True)
class InstructionSpan:
    start: float
    end: float
    text: str

    def covers(self, ts: float) -> bool:
        return self.start <= ts < self.end


@dataclass(frozen=True)
class ReasoningPoint:
    ts: float
    text: str


@dataclass
class Annotations:
    instructions: list[InstructionSpan] = field(default_factory=list)
    reasoning: list[ReasoningPoint] = field(default_factory=list)


@dataclass
class DatasetSample:
    kind: str
    history: bool
    steps: list[FrameActionPair]
    instruction: Optional[str] = None
    reasoning: Optional[str] = None
    prev_reasoning: Optional[str] = None
    # reasoning trajectories only: "reasoning" (next one reached) or "cap"
    terminated_by: Optional[str] = None

    def to_record(self) -> dict:
        rec = {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "history": self.history,
            "instruction": self.instruction,
            "reasoning": self.reasoning,
            "prev_reasoning": self.prev_reasoning,
            "steps": [p.to_record() for p in self.steps],
        }
        if self.terminated_by is not None:
            rec["terminated_by"] = self.terminated_by
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "DatasetSample":
        if rec.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {rec.get('schema_version')!r}")
        return cls(rec["kind"], rec["history"],
                   [FrameActionPair.from_record(s) for s in rec["steps"]],
                   rec.get("instruction"), rec.get("reasoning"), rec.get("prev_reasoning"),
                   rec.get("terminated_by"))


def write_samples(samples: Iterable[DatasetSample], fh: IO[str]) -> int:
    n = 0
    for s in samples:
        fh.write(json.dumps(s.to_record(), ensure_ascii=False, sort_keys=True) + "\n")
        n += 1
    return n


def read_samples(fh: IO[str]) -> list[DatasetSample]:
    return [DatasetSample.from_record(json.loads(line)) for line in fh if line.strip()]


def _windows(pairs: Sequence[FrameActionPair], size: int) -> Iterator[list[FrameActionPair]]:
    for i in range(0, len(pairs), size):
        yield list(pairs[i:i + size])


def _reasoning_steps(pairs: Sequence[FrameActionPair], points: Sequence[ReasoningPoint],
                     frame_ms: float) -> dict[int, str]:
    """Map each reasoning point to the pair whose frame window contains it."""
    out: dict[int, str] = {}
    j = 0
    pts = sorted(points, key=lambda p: p.ts)
    for i, pair in enumerate(pairs):
        while j < len(pts) and pts[j].ts < pair.ts + frame_ms:
            if pts[j].ts >= pair.ts:
                out[i] = pts[j].text
            j += 1
    return out


def assemble_samples(pairs: Sequence[FrameActionPair], annotations: Optional[Annotations],
                     kind: str, history: bool, window: int = HISTORY_WINDOW,
                     frame_ms: float = 200.0,
                     diagnostics: Optional[Diagnostics] = None) -> Iterator[DatasetSample]:
    """Yield training samples of ``kind`` in history or single-step layout.

    * pretrain: one pair per sample, or consecutive windows of ``window``.
    * instruct: pairs inside an instruction span carry its text; history
      samples window each span separately. Uncovered pairs are skipped.
    * reasoning: single-step samples carry the latest reasoning as input and,
      on a reasoning frame, the new reasoning as target. History trajectories
      start at a reasoning frame and stop before the next one or after
      ``window`` frames; a trajectory cut short by the end of the session is
      dropped.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown sample kind {kind!r}")
    diagnostics = diagnostics if diagnostics is not None else Diagnostics()
    annotations = annotations or Annotations()

    if kind == "pretrain":
        if history:
            for w in _windows(pairs, window):
                yield DatasetSample(kind, True, w)
        else:
            for p in pairs:
                yield DatasetSample(kind, False, [p])
        return

    if kind == "instruct":
        spans = sorted(annotations.instructions, key=lambda s: s.start)
        groups: list[tuple[InstructionSpan, list[FrameActionPair]]] = []
        gaps = 0
        for p in pairs:
            span = next((s for s in spans if s.covers(p.ts)), None)
            if span is None:
                gaps += 1
                continue
            if groups and groups[-1][0] is span:
                groups[-1][1].append(p)
            else:
                groups.append((span, [p]))
        if gaps:
            diagnostics.add("annotation-gap", f"{gaps} pairs outside any instruction span")
        for span, members in groups:
            if history:
                for w in _windows(members, window):
                    yield DatasetSample(kind, True, w, instruction=span.text)
            else:
                for p in members:
                    yield DatasetSample(kind, False, [p], instruction=span.text)
        return

    points = _reasoning_steps(pairs, annotations.reasoning, frame_ms)
    starts = sorted(points)
    if not starts:
        diagnostics.add("no-reasoning", "no reasoning points fall on any frame")
        return
    if not history:
        prev: Optional[str] = None
        for i in range(starts[0], len(pairs)):
            new = points.get(i)
            yield DatasetSample(kind, False, [pairs[i]], reasoning=new, prev_reasoning=prev)
            if new is not None:
                prev = new
        return
    prev = None
    for n, s in enumerate(starts):
        nxt = starts[n + 1] if n + 1 < len(starts) else None
        stop = s + window
        if nxt is not None and nxt <= stop:
            stop, why = nxt, "reasoning"
        elif stop <= len(pairs):
            why = "cap"
        else:
            diagnostics.add("trajectory-truncated",
                            f"trajectory at step {s} ends with the session after {len(pairs) - s} frames")
            prev = points[s]
            continue
        yield DatasetSample(kind, True, list(pairs[s:stop]), reasoning=points[s],
                            prev_reasoning=prev, terminated_by=why)
        prev = points[s]
