from __future__ import annotations

import json
import random
from pathlib import Path
from typing import IO, Iterable, Optional, Sequence, Union

from ..context import ContextWindow
from ..grammar import (
    ACTION_END, ACTION_START, EMPTY_CHUNK, NUM_CHUNKS, THOUGHT_END, THOUGHT_START, ActionSequence,
    KeyChunk, ModelTurn, MouseDelta, format_turn, parse_turn,
)

# Keys a gameplay policy reaches for most, weighted roughly by use.
COMMON_KEYS = ("W", "W", "W", "Shift", "A", "D", "S", "Space", "LMB", "E", "F", "Q", "R", "Esc")
CHUNK_SIZE_WEIGHTS = (0.30, 0.40, 0.20, 0.07, 0.03)  # 0..4 keys


def random_chunk(rng: random.Random, prev: KeyChunk = EMPTY_CHUNK, persist: float = 0.7) -> KeyChunk:
    """A chunk that mostly keeps holding ``prev``; sizes skew to one or two keys."""
    if prev.keys and rng.random() < persist:
        return prev
    size = rng.choices(range(5), CHUNK_SIZE_WEIGHTS)[0]
    keys: list[str] = []
    while len(keys) < size:
        k = rng.choice(COMMON_KEYS)
        if k not in keys:
            keys.append(k)
    return KeyChunk.of(*keys)


def random_action(rng: random.Random, prev_tail: KeyChunk = EMPTY_CHUNK) -> ActionSequence:
    dx = int(rng.gauss(0, 40)) if rng.random() < 0.7 else 0
    dy = int(rng.gauss(0, 10)) if rng.random() < 0.4 else 0
    dz = rng.choice((-1, 1)) if rng.random() < 0.05 else 0
    clamp = lambda v, lim: max(-lim, min(lim, v))
    chunks = []
    prev = prev_tail
    for _ in range(NUM_CHUNKS):
        prev = random_chunk(rng, prev)
        chunks.append(prev)
    return ActionSequence(MouseDelta(clamp(dx, 999), clamp(dy, 999), dz), tuple(chunks))


def random_corpus(n: int, seed: int = 0) -> list[ActionSequence]:
    rng = random.Random(seed)
    out = []
    tail = EMPTY_CHUNK
    for _ in range(n):
        a = random_action(rng, tail)
        tail = a.chunks[-1]
        out.append(a)
    return out


def read_playlist(source: Union[str, Path, IO[str]]) -> list[ModelTurn]:
    """Scripted turns, one per JSONL line: ``{"turn": "<|action_start|>...<|action_end|>"}``
    or ``{"action": "...", "reasoning": "..."}``."""
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            return read_playlist(fh)
    turns = []
    for line in source:
        if not line.strip():
            continue
        rec = json.loads(line)
        if "turn" in rec:
            turns.append(parse_turn(rec["turn"]))
        else:
            text = rec["action"]
            if ACTION_START not in text:
                text = f"{ACTION_START}{text}{ACTION_END}"
            reasoning = rec.get("reasoning")
            if reasoning is not None:
                text = f"{THOUGHT_START}{reasoning}{THOUGHT_END}{text}"
            turns.append(parse_turn(text))
    return turns


def write_playlist(turns: Iterable[ModelTurn], fh: IO[str]) -> None:
    for t in turns:
        fh.write(json.dumps({"turn": format_turn(t)}) + "\n")


class MockPolicy:
    """Stand-in for the model server's decision step.

    Output depends only on ``(seed, seq)`` and the context's force-think flag.
    A playlist, when given, supplies the actions in order; ``think_every``
    makes every ``n``-th step (from seq 0) a thinking turn; a pending
    force-think on the context also turns the step into a thinking turn.
    """

    def __init__(self, seed: int = 0, playlist: Optional[Sequence[ModelTurn]] = None,
                 think_every: Optional[int] = None):
        if think_every is not None and think_every < 1:
            raise ValueError("think_every must be positive")
        self.seed = seed
        self.playlist = list(playlist) if playlist is not None else None
        self.think_every = think_every
        self.forced: list[int] = []

    def __len__(self):
        return len(self.playlist) if self.playlist is not None else 0

    def exhausted(self, seq: int) -> bool:
        return self.playlist is not None and seq >= len(self.playlist)

    def __call__(self, frame: bytes, ctx: Optional[ContextWindow], seq: int) -> ModelTurn:
        rng = random.Random(self.seed * 1_000_003 + seq)
        if self.playlist is not None:
            if seq >= len(self.playlist):
                raise IndexError(f"playlist has {len(self.playlist)} turns, asked for seq {seq}")
            turn = self.playlist[seq]
        else:
            tail = ctx.entries[-1].turn.action.chunks[-1] if ctx is not None and ctx.entries else EMPTY_CHUNK
            turn = ModelTurn(random_action(rng, tail))
        if turn.thinking:
            return turn
        scheduled = self.think_every is not None and seq % self.think_every == 0
        forced = ctx is not None and ctx.force_think_check()
        if forced and not scheduled:
            self.forced.append(seq)
        if scheduled or forced:
            return ModelTurn(turn.action, reasoning=f"step {seq}: check surroundings and pick the next subgoal")
        return turn
