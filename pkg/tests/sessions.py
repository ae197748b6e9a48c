"""Synthetic recording sessions with known ground truth.

A session is generated from per-frame truth (key chunks, cursor path, relative
polls, scene labels) and an injected start offset between input logging and
the first video frame. Expected values are computed here with plain loops so
they can be checked against the pipeline.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

from agent_rt.grammar import MouseDelta, KeyChunk
from agent_rt.harness.policy import random_chunk
from agent_rt.pipeline import AbsSample, KeyEvent, RawInputLog, RelPoll, VideoIndex, write_event_log
from agent_rt.pipeline.logs import video_index_record
import oracles

FIRST_FRAME_MS = 1_000_000
FRAME_MS = 200
BIN_STARTS = (0, 33, 66, 100, 133, 166, 200)
# Hook-side spellings for some canonical keys.
RAW_NAMES = {"Shift": "LShift", "LMB": "LButton", "Esc": "Escape", "Ctrl": "LControl"}


@dataclass
class SyntheticSession:
    video: VideoIndex
    raw: RawInputLog
    offset_ms: int
    frames_dropped: int
    origin: float
    # per retained frame
    chunks: list[tuple[KeyChunk, ...]]
    raw_mouse: list[tuple[int, int, int]]
    # per original frame
    scenes: list[str]
    # key events at or after the origin, canonical names, with true times
    key_truth: list[tuple[float, str, str]] = field(default_factory=list)

    @property
    def frame_times(self) -> list[float]:
        return [self.video.frame_time(i) for i in range(self.frames_dropped, self.video.frame_count)]

    def expected_mouse(self) -> list[MouseDelta]:
        out = []
        for dx, dy, wheel in self.raw_mouse:
            ux = max(-999, min(999, oracles.round_half_away(dx / 5)))
            uy = max(-999, min(999, oracles.round_half_away(dy / 4)))
            out.append(MouseDelta(ux, uy, max(-5, min(5, wheel))))
        return out

    def write(self, root: Path, annotations: dict | None = None) -> Path:
        root.mkdir(parents=True, exist_ok=True)
        with open(root / "events.jsonl", "w", encoding="utf-8") as fh:
            write_event_log(self.raw, fh)
        (root / "video.json").write_text(json.dumps(video_index_record(self.video)), encoding="utf-8")
        if annotations is not None:
            (root / "annotations.json").write_text(json.dumps(annotations), encoding="utf-8")
        return root


def _raw_name(rng: random.Random, key: str) -> str:
    if key in RAW_NAMES and rng.random() < 0.5:
        return RAW_NAMES[key]
    if len(key) == 1 and rng.random() < 0.5:
        return key.lower()
    return key


def make_session(seed: int, offset_ms: int, n_frames: int = 60, idle_prob: float = 0.3,
                 gui_prob: float = 0.3) -> SyntheticSession:
    """Input logging starts ``offset_ms`` before the first frame (after it when negative)."""
    rng = random.Random(seed)
    start = FIRST_FRAME_MS - offset_ms
    dropped = 0 if offset_ms >= 0 else math.ceil(-offset_ms / FRAME_MS)
    if dropped >= n_frames:
        raise ValueError("offset drops every frame")
    origin = FIRST_FRAME_MS + dropped * FRAME_MS

    keys: list[KeyEvent] = []
    rel: list[RelPoll] = []
    absp: list[AbsSample] = []

    # Activity before the synchronized start; all of it must be trimmed away.
    t = start
    while t + 20 < origin:
        k = rng.choice(("W", "A", "E"))
        keys += [KeyEvent(t, k, True), KeyEvent(t + 10, k, False)]
        rel.append(RelPoll(t + 1, rng.randint(-50, 50), rng.randint(-50, 50), rng.choice((0, 0, 1))))
        absp.append(AbsSample(t + 2, rng.randint(0, 1279), rng.randint(0, 719)))
        t += 37

    scenes = [rng.choice(("gui", "overworld")) if rng.random() < gui_prob else "overworld"
              for _ in range(n_frames)]
    chunks_out, raw_mouse, truth = [], [], []
    held: list[str] = []
    prev_chunk = KeyChunk()
    cursor = (640, 360)
    last_abs = None
    for idx in range(dropped, n_frames):
        ft = FIRST_FRAME_MS + idx * FRAME_MS
        idle = rng.random() < idle_prob
        frame_chunks = []
        for i in range(6):
            chunk = KeyChunk() if idle else random_chunk(rng, prev_chunk)
            prev_chunk = chunk
            frame_chunks.append(chunk)
            b, e = ft + BIN_STARTS[i], ft + BIN_STARTS[i + 1]
            for k in [k for k in held if k not in chunk.keys]:
                at = b + rng.randrange(e - b)
                keys.append(KeyEvent(at, _raw_name(rng, k), False))
                truth.append((at, "key-up", k))
            for k in [k for k in chunk.keys if k not in held]:
                at = b + rng.randrange(e - b)
                keys.append(KeyEvent(at, _raw_name(rng, k), True))
                truth.append((at, "key-down", k))
            held = list(chunk.keys)
        chunks_out.append(tuple(frame_chunks))

        # relative polls every 5 ms, cursor samples every 8 ms
        sx = sy = wheel = 0
        for j in range(40):
            dx = dy = w = 0
            if not idle:
                dx, dy = rng.randint(-9, 9), rng.randint(-6, 6)
                w = 1 if rng.random() < 0.01 else 0
            rel.append(RelPoll(ft + 1 + 5 * j, dx, dy, w))
            sx, sy, wheel = sx + dx, sy + dy, wheel + w
        first_in_frame = None
        for j in range(25):
            if not idle:
                cursor = (cursor[0] + rng.randint(-7, 9), cursor[1] + rng.randint(-5, 6))
            sample = AbsSample(ft + 3 + 8 * j, *cursor)
            absp.append(sample)
            first_in_frame = first_in_frame or sample
        if scenes[idx] == "gui":
            begin = last_abs if last_abs is not None else first_in_frame
            raw_mouse.append((cursor[0] - begin.x, cursor[1] - begin.y, wheel))
        else:
            raw_mouse.append((sx, sy, wheel))
        last_abs = absp[-1]

    keys.sort(key=lambda e: e.t)
    raw = RawInputLog(keys, rel, absp, started_at=float(start))
    video = VideoIndex(float(FIRST_FRAME_MS), FRAME_MS, n_frames, "frames", tuple(scenes))
    return SyntheticSession(video, raw, offset_ms, dropped, float(origin), chunks_out, raw_mouse,
                            scenes, sorted(truth))


def quantized_truth(session: SyntheticSession) -> list[tuple[int, str, str]]:
    """True key events snapped back to the start of their bin, relative to the origin."""
    out = []
    for at, kind, key in session.key_truth:
        rel = at - session.origin
        frame, within = divmod(rel, FRAME_MS)
        b = max(s for s in BIN_STARTS[:6] if s <= within)
        out.append((int(frame * FRAME_MS + b), kind, key))
    return sorted(out)
