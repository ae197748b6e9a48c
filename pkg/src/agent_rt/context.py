"""Sliding-window inference context with reasoning-triggered flush.

The window holds the system prompt, the most recent reasoning and a FIFO of
frame/turn pairs. A new reasoning clears the FIFO and restarts it from the
frame that produced the reasoning. Token-span bookkeeping mirrors a KV cache
whose system-prompt prefix is pinned as an attention sink.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Optional

from .grammar import (
    ACTION_END, ACTION_START, IM_END, IM_START, THOUGHT_END, THOUGHT_START,
    ModelTurn, format_turn, parse_turn, serialize_action, tokenize_action,
)

HISTORY_CAPACITY = 20
NON_HISTORY_CAPACITY = 1
FORCE_THINK_AFTER = 100
IMAGE_TOKENS = 1196
# <|im_start|>role, <|im_end|> for the user and assistant messages of a pair.
_PAIR_FRAMING_TOKENS = 6


class ThinkingTurnRejected(ValueError):
    pass


class NonThinkingTurnRejected(ValueError):
    pass


def default_entry_tokens(turn: ModelTurn, image_tokens: int = IMAGE_TOKENS) -> int:
    """Token estimate for one pair: image, action tokens, markers and chat framing."""
    return image_tokens + len(tokenize_action(turn.action)) + 1 + _PAIR_FRAMING_TOKENS


@dataclass(frozen=True)
class ContextEntry:
    step: int
    frame: str
    turn: ModelTurn
    n_tokens: int


@dataclass(frozen=True)
class Span:
    label: str
    start: int
    end: int

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class CachePlan:
    reused_prefix_len: int
    dropped_spans: tuple[Span, ...]
    sink_anchor: Span

    @property
    def dropped_len(self) -> int:
        return sum(s.length for s in self.dropped_spans)


class ContextWindow:
    """Single-owner context state for one control loop."""

    def __init__(self, system_prompt: str, capacity: int = HISTORY_CAPACITY,
                 system_tokens: int = 0, initial_instruction: Optional[str] = None,
                 instruction_tokens: int = 0, force_think_after: int = FORCE_THINK_AFTER,
                 image_tokens: int = IMAGE_TOKENS):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.system_prompt = system_prompt
        self.capacity = capacity
        self.system_tokens = system_tokens
        self.force_think_after = force_think_after
        self.image_tokens = image_tokens
        # An initial instruction behaves like a reasoning that later ones override.
        self.latest_reasoning: Optional[str] = initial_instruction
        self.reasoning_tokens = instruction_tokens if initial_instruction else 0
        self.entries: list[ContextEntry] = []
        self.steps_since_reasoning = 0
        self.next_step = 0
        self.pushed = 0
        self.evicted = 0
        self.flushed = 0
        self._layout_before: list[Span] = []
        self._last_flush = False

    # -- mutation -------------------------------------------------------------

    def _entry(self, frame: str, turn: ModelTurn, step: Optional[int], n_tokens: Optional[int]):
        if step is None:
            step = self.next_step
        if self.entries and step <= self.entries[-1].step:
            raise ValueError(f"step {step} does not increase past {self.entries[-1].step}")
        self.next_step = step + 1
        if n_tokens is None:
            n_tokens = default_entry_tokens(turn, self.image_tokens)
        return ContextEntry(step, frame, turn, n_tokens)

    def push_step(self, frame: str, turn: ModelTurn, step: Optional[int] = None,
                  n_tokens: Optional[int] = None) -> list[ContextEntry]:
        """Append a non-thinking pair; returns the evicted entries (zero or one)."""
        if turn.thinking:
            raise ThinkingTurnRejected("thinking turns go through flush_on_reasoning")
        entry = self._entry(frame, turn, step, n_tokens)
        self._layout_before = self.layout()
        self._last_flush = False
        self.entries.append(entry)
        self.pushed += 1
        self.steps_since_reasoning += 1
        evictions = []
        if len(self.entries) > self.capacity:
            evictions.append(self.entries.pop(0))
            self.evicted += 1
        return evictions

    def flush_on_reasoning(self, frame: str, turn: ModelTurn, step: Optional[int] = None,
                           n_tokens: Optional[int] = None,
                           reasoning_tokens: Optional[int] = None) -> list[ContextEntry]:
        """Clear the FIFO and restart it from the thinking turn's own pair.

        Returns the flushed entries.
        """
        if not turn.thinking:
            raise NonThinkingTurnRejected("flush needs a thinking turn")
        entry = self._entry(frame, turn, step, n_tokens)
        self._layout_before = self.layout()
        self._last_flush = True
        flushed, self.entries = self.entries, [entry]
        self.flushed += len(flushed)
        self.pushed += 1
        self.latest_reasoning = turn.reasoning
        self.reasoning_tokens = (reasoning_tokens if reasoning_tokens is not None
                                 else len(turn.reasoning.split()) + 2)
        self.steps_since_reasoning = 0
        return flushed

    def record(self, frame: str, turn: ModelTurn, **kw) -> list[ContextEntry]:
        """Dispatch to :meth:`flush_on_reasoning` or :meth:`push_step` by turn mode."""
        if turn.thinking:
            return self.flush_on_reasoning(frame, turn, **kw)
        kw.pop("reasoning_tokens", None)
        return self.push_step(frame, turn, **kw)

    # -- queries --------------------------------------------------------------

    def force_think_check(self) -> bool:
        return self.steps_since_reasoning > self.force_think_after

    def layout(self) -> list[Span]:
        """Token spans in cache order: sink, reasoning, then entries."""
        spans = [Span("system", 0, self.system_tokens)]
        pos = self.system_tokens
        if self.latest_reasoning is not None:
            spans.append(Span("reasoning", pos, pos + self.reasoning_tokens))
            pos += self.reasoning_tokens
        for e in self.entries:
            spans.append(Span(f"step:{e.step}", pos, pos + e.n_tokens))
            pos += e.n_tokens
        return spans

    def assemble_prompt(self) -> str:
        """Deterministic dialogue text for the current window.

        Order is system prompt, latest reasoning, then one user-image /
        assistant-action exchange per entry. A thinking entry's reasoning is
        carried by the reasoning block, so entries render their action only.
        """
        parts = [f"{IM_START}system\n{self.system_prompt}{IM_END}\n"]
        if self.latest_reasoning is not None:
            parts.append(f"{IM_START}assistant\n{THOUGHT_START}{self.latest_reasoning}"
                         f"{THOUGHT_END}{IM_END}\n")
        for e in self.entries:
            parts.append(f"{IM_START}user\n<image:{e.frame}>{IM_END}\n")
            parts.append(f"{IM_START}assistant\n{ACTION_START}{serialize_action(e.turn.action)}"
                         f"{ACTION_END}{IM_END}\n")
        return "".join(parts)

    def plan_cache(self, evictions: list[ContextEntry]) -> CachePlan:
        """KV-cache reuse plan for the most recent operation.

        ``evictions`` is what the last :meth:`push_step` returned (or the
        flushed entries). The previous layout is kept internally, so the plan
        describes which of the previously cached spans survive.
        """
        before = self._layout_before or [Span("system", 0, self.system_tokens)]
        sink = before[0]
        if self._last_flush:
            dropped = tuple(s for s in before[1:])
        else:
            gone = {f"step:{e.step}" for e in evictions}
            dropped = tuple(s for s in before[1:] if s.label in gone)
        reused = sum(s.length for s in before) - sum(s.length for s in dropped)
        return CachePlan(reused, dropped, sink)

    @property
    def resident(self) -> int:
        return len(self.entries)

    # -- snapshots ------------------------------------------------------------

    def snapshot(self) -> dict[str, Any]:
        return {
            "system_prompt": self.system_prompt,
            "capacity": self.capacity,
            "force_think_after": self.force_think_after,
            "system_tokens": self.system_tokens,
            "image_tokens": self.image_tokens,
            "latest_reasoning": self.latest_reasoning,
            "reasoning_tokens": self.reasoning_tokens,
            "steps_since_reasoning": self.steps_since_reasoning,
            "entries": [
                {"step": e.step, "frame": e.frame, "turn": format_turn(e.turn), "n_tokens": e.n_tokens}
                for e in self.entries
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.snapshot(), sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_snapshot(cls, snap: dict[str, Any]) -> "ContextWindow":
        ctx = cls(snap["system_prompt"], capacity=snap["capacity"],
                  system_tokens=snap.get("system_tokens", 0),
                  force_think_after=snap.get("force_think_after", FORCE_THINK_AFTER),
                  image_tokens=snap.get("image_tokens", IMAGE_TOKENS))
        ctx.latest_reasoning = snap["latest_reasoning"]
        ctx.reasoning_tokens = snap.get("reasoning_tokens", 0)
        ctx.steps_since_reasoning = snap["steps_since_reasoning"]
        ctx.entries = [
            ContextEntry(e["step"], e["frame"], parse_turn(e["turn"]), e["n_tokens"])
            for e in snap["entries"]
        ]
        if ctx.entries:
            ctx.next_step = ctx.entries[-1].step + 1
        return ctx


@dataclass
class Interaction:
    """One recorded step: the frame reference and the turn the model produced."""

    frame: str
    turn: ModelTurn
    extra: dict = field(default_factory=dict)


def replay_prompts(ctx: ContextWindow, interactions: list[Interaction]) -> list[str]:
    """Prompt assembled before each step, replaying ``interactions`` in order."""
    prompts = []
    for it in interactions:
        prompts.append(ctx.assemble_prompt())
        ctx.record(it.frame, it.turn)
    prompts.append(ctx.assemble_prompt())
    return prompts
