"""Delimiter drafting for the action grammar and a forward-step simulator.

Every field of an action ends in a fixed delimiter: a space after ``dx`` and
``dy``, a semicolon after ``dz`` and ``K1``..``K5`` and the action-end token
after ``K6``. Tracking which field is being generated is enough to propose
that delimiter as a one-token draft, verified in the same forward step as the
token before it.
"""

from __future__ import annotations

import enum
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .grammar import (
    END, MAX_KEYS_PER_CHUNK, SEMI, SPACE, ActionSequence, is_key_token,
    is_number_token, tokenize_action,
)


class IllegalToken(ValueError):
    pass


class Phase(enum.IntEnum):
    DX = 0
    DY = 1
    DZ = 2
    K1 = 3
    K2 = 4
    K3 = 5
    K4 = 6
    K5 = 7
    K6 = 8
    DONE = 9

    @property
    def is_mouse(self) -> bool:
        return self <= Phase.DZ

    @property
    def chunk_index(self) -> int:
        """Streamed chunk ordinal: 0 for the mouse fields, 1..6 for K1..K6."""
        return 0 if self.is_mouse else int(self) - int(Phase.K1) + 1


@dataclass(frozen=True)
class DecodeStage:
    phase: Phase = Phase.DX
    # Keys so far in the current chunk; for mouse phases, numbers in the field.
    keys_in_chunk: int = 0

    @property
    def done(self) -> bool:
        return self.phase is Phase.DONE


START = DecodeStage()


def next_draft(stage: DecodeStage) -> str:
    """The delimiter that closes the current field."""
    if stage.phase in (Phase.DX, Phase.DY):
        return SPACE
    if stage.phase is Phase.K6:
        return END
    if stage.phase is Phase.DONE:
        raise IllegalToken("decoding already finished")
    return SEMI


def advance_stage(stage: DecodeStage, token: str) -> DecodeStage:
    phase, n = stage.phase, stage.keys_in_chunk
    if phase is Phase.DONE:
        raise IllegalToken(f"token {token!r} after action end")
    if phase.is_mouse:
        if is_number_token(token):
            if n:
                raise IllegalToken(f"second number in {phase.name}")
            return DecodeStage(phase, 1)
        if token == next_draft(stage):
            if not n:
                raise IllegalToken(f"{phase.name} closed before its number")
            return DecodeStage(Phase(phase + 1), 0)
        raise IllegalToken(f"token {token!r} illegal in {phase.name}")
    if is_key_token(token):
        if n >= MAX_KEYS_PER_CHUNK:
            raise IllegalToken(f"key #{n + 1} in {phase.name}")
        return DecodeStage(phase, n + 1)
    if token == next_draft(stage):
        return DecodeStage(Phase(phase + 1), 0)
    raise IllegalToken(f"token {token!r} illegal in {phase.name}")


def is_boundary(stage: DecodeStage, token: str) -> bool:
    """True when ``token`` completes an executable chunk at ``stage``.

    The mouse fields complete together at the semicolon after ``dz``; each key
    chunk completes at its own delimiter.
    """
    if stage.phase in (Phase.DX, Phase.DY, Phase.DONE):
        return False
    return token == next_draft(stage)


@dataclass(frozen=True)
class ChunkTiming:
    index: int
    tokens: int
    steps: int
    done_step: int
    done_ms: float


@dataclass
class DecodeResult:
    forward_steps: int
    accepted_drafts: int
    emitted: list[str]
    timeline: list[ChunkTiming]
    reasoning_steps: int = 0

    @property
    def action_steps(self) -> int:
        return self.forward_steps - self.reasoning_steps


def simulate_decode(target: Sequence[str], latency_per_step: float = 0.0,
                    reasoning_tokens: int = 0, drafting: bool = True) -> DecodeResult:
    """Replay decoding of ``target`` with one delimiter draft per forward step.

    Each step emits the true next token; the draft for the stage reached after
    it is accepted iff it equals the following target token. With a point-mass
    draft, rejection sampling reduces to this equality test, so the emitted
    stream always equals ``target``. Reasoning tokens cost one step each and
    are never drafted.
    """
    stage = START
    emitted: list[str] = []
    accepted = 0
    step = reasoning_tokens
    chunk_tokens = [0] * 7
    chunk_steps = [0] * 7
    done_step = [0] * 7
    i = 0
    while i < len(target):
        step += 1
        tok = target[i]
        chunk = stage.phase.chunk_index
        chunk_steps[chunk] += 1
        for_tok = [tok]
        if drafting and i + 1 < len(target):
            nxt_stage = advance_stage(stage, tok)
            if not nxt_stage.done and next_draft(nxt_stage) == target[i + 1]:
                for_tok.append(target[i + 1])
                accepted += 1
        for t in for_tok:
            c = stage.phase.chunk_index
            chunk_tokens[c] += 1
            if is_boundary(stage, t):
                done_step[c] = step
            stage = advance_stage(stage, t)
            emitted.append(t)
        i += len(for_tok)
    timeline = [
        ChunkTiming(c, chunk_tokens[c], chunk_steps[c], done_step[c], done_step[c] * latency_per_step)
        for c in range(7)
    ]
    return DecodeResult(step, accepted, emitted, timeline, reasoning_tokens)


def decode_action(action: ActionSequence, latency_per_step: float = 0.0,
                  reasoning_tokens: int = 0, drafting: bool = True) -> DecodeResult:
    return simulate_decode(tokenize_action(action), latency_per_step, reasoning_tokens, drafting)


@dataclass
class CorpusStats:
    actions: int
    chunks: int
    mean_tokens_per_chunk: float
    mean_steps_per_chunk: float
    savings_ratio: float
    max_chunk_steps: int
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "mean_tokens_per_chunk": self.mean_tokens_per_chunk,
            "mean_steps_per_chunk": self.mean_steps_per_chunk,
            "savings_ratio": self.savings_ratio,
            "actions": self.actions,
            "chunks": self.chunks,
            "max_chunk_steps": self.max_chunk_steps,
        }


def corpus_stats(actions: Iterable[ActionSequence]) -> CorpusStats:
    """Per-key-chunk token and step averages over a corpus.

    Only the six key chunks enter the per-chunk means; ``savings_ratio`` is
    forward steps over tokens for whole actions.
    """
    tokens = steps = 0
    per_tok: list[int] = []
    per_step: list[int] = []
    n = 0
    for action in actions:
        n += 1
        res = decode_action(action)
        tokens += len(res.emitted)
        steps += res.forward_steps
        for ct in res.timeline[1:]:
            per_tok.append(ct.tokens)
            per_step.append(ct.steps)
    if not n:
        raise ValueError("empty corpus")
    return CorpusStats(
        actions=n,
        chunks=len(per_tok),
        mean_tokens_per_chunk=statistics.fmean(per_tok),
        mean_steps_per_chunk=statistics.fmean(per_step),
        savings_ratio=steps / tokens,
        max_chunk_steps=max(per_step),
    )
