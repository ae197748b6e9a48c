"""Raw recording inputs: the input-event log and the sampled video index.

Event logs are JSONL, one record per line::

    {"t_us": 1712000000123456, "stream": "key", "payload": {"key": "W", "down": true}}
    {"t_us": ..., "stream": "rel", "payload": {"dx": 3, "dy": -1, "wheel": 0}}
    {"t_us": ..., "stream": "abs", "payload": {"x": 640, "y": 360}}
    {"t_us": ..., "stream": "start"}

The optional ``start`` record marks when input logging began; without it the
earliest timestamp is used. Times are converted to float milliseconds.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Optional, Union

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    at_ms: Optional[float] = None


class Diagnostics(list):
    """Collects pipeline diagnostics and mirrors them to the logger."""

    def add(self, code: str, message: str, at_ms: Optional[float] = None,
            level: int = logging.INFO) -> None:
        self.append(Diagnostic(code, message, at_ms))
        log.log(level, "%s: %s", code, message)

    def codes(self) -> list[str]:
        return [d.code for d in self]


class EmptyStream(ValueError):
    pass


@dataclass(frozen=True)
class KeyEvent:
    t: float
    key: str
    down: bool


@dataclass(frozen=True)
class RelPoll:
    t: float
    dx: int
    dy: int
    wheel: int = 0


@dataclass(frozen=True)
class AbsSample:
    t: float
    x: int
    y: int


@dataclass
class RawInputLog:
    key_events: list[KeyEvent] = field(default_factory=list)
    rel_polls: list[RelPoll] = field(default_factory=list)
    abs_positions: list[AbsSample] = field(default_factory=list)
    started_at: Optional[float] = None

    def __post_init__(self):
        for name in ("key_events", "rel_polls", "abs_positions"):
            ts = [r.t for r in getattr(self, name)]
            if any(b < a for a, b in zip(ts, ts[1:])):
                raise ValueError(f"{name} timestamps are not monotone")

    @property
    def start(self) -> float:
        if self.started_at is not None:
            return self.started_at
        firsts = [s[0].t for s in (self.key_events, self.rel_polls, self.abs_positions) if s]
        if not firsts:
            raise EmptyStream("input log has no events")
        return min(firsts)

    @property
    def empty(self) -> bool:
        return not (self.key_events or self.rel_polls or self.abs_positions)

    def trimmed(self, t0: float) -> "RawInputLog":
        """Copy without records earlier than ``t0``; logging now starts at ``t0``."""
        return RawInputLog(
            [e for e in self.key_events if e.t >= t0],
            [p for p in self.rel_polls if p.t >= t0],
            [a for a in self.abs_positions if a.t >= t0],
            started_at=t0,
        )


@dataclass(frozen=True)
class VideoIndex:
    first_frame_at: float
    frame_interval: float = 200.0
    frame_count: int = 0
    frames_dir: Optional[str] = None
    scenes: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if self.frame_interval <= 0:
            raise ValueError("frame_interval must be positive")

    def frame_time(self, index: int) -> float:
        return self.first_frame_at + index * self.frame_interval


def _records(lines: Iterable[str]) -> Iterable[dict]:
    for n, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            yield json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"line {n}: {exc}") from exc


def parse_event_log(lines: Iterable[str]) -> RawInputLog:
    keys, rel, abs_ = [], [], []
    started = None
    for rec in _records(lines):
        t = rec["t_us"] / 1000.0
        stream = rec["stream"]
        p = rec.get("payload", {})
        if stream == "key":
            keys.append(KeyEvent(t, p["key"], bool(p["down"])))
        elif stream == "rel":
            rel.append(RelPoll(t, int(p.get("dx", 0)), int(p.get("dy", 0)), int(p.get("wheel", 0))))
        elif stream == "abs":
            abs_.append(AbsSample(t, int(p["x"]), int(p["y"])))
        elif stream == "start":
            started = t
        else:
            raise ValueError(f"unknown stream {stream!r}")
    for seq in (keys, rel, abs_):
        seq.sort(key=lambda r: r.t)
    return RawInputLog(keys, rel, abs_, started)


def read_event_log(path: Union[str, Path]) -> RawInputLog:
    with open(path, encoding="utf-8") as fh:
        return parse_event_log(fh)


def write_event_log(raw: RawInputLog, fh: IO[str]) -> None:
    recs = []
    if raw.started_at is not None:
        recs.append((raw.started_at, 0, {"stream": "start"}))
    for e in raw.key_events:
        recs.append((e.t, 1, {"stream": "key", "payload": {"key": e.key, "down": e.down}}))
    for p in raw.rel_polls:
        recs.append((p.t, 2, {"stream": "rel", "payload": {"dx": p.dx, "dy": p.dy, "wheel": p.wheel}}))
    for a in raw.abs_positions:
        recs.append((a.t, 3, {"stream": "abs", "payload": {"x": a.x, "y": a.y}}))
    recs.sort(key=lambda r: (r[0], r[1]))
    for t, _, rec in recs:
        fh.write(json.dumps({"t_us": round(t * 1000), **rec}, sort_keys=True) + "\n")


def read_video_index(path: Union[str, Path]) -> VideoIndex:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    scenes = d.get("scenes")
    return VideoIndex(
        first_frame_at=d["first_frame_us"] / 1000.0,
        frame_interval=d.get("frame_interval_ms", 200.0),
        frame_count=d["frame_count"],
        frames_dir=d.get("frames_dir"),
        scenes=tuple(scenes) if scenes is not None else None,
    )


def video_index_record(video: VideoIndex) -> dict:
    d = {
        "first_frame_us": round(video.first_frame_at * 1000),
        "frame_interval_ms": video.frame_interval,
        "frame_count": video.frame_count,
    }
    if video.frames_dir is not None:
        d["frames_dir"] = video.frames_dir
    if video.scenes is not None:
        d["scenes"] = list(video.scenes)
    return d
