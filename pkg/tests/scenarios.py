"""Scripted scenarios shared by unit and acceptance suites."""

from __future__ import annotations

import random

from agent_rt.context import ContextWindow
from agent_rt.grammar import ActionSequence, KeyChunk, ModelTurn, MouseDelta

SYSTEM = "You are a game agent."


def act(n: int) -> ActionSequence:
    return ActionSequence(MouseDelta(n, 0, 0), (KeyChunk.of("W"),) * 6)


# Sliding window of two pairs: an initial reasoning, three pushes (the third
# evicts the oldest), a new reasoning that flushes, then two more pushes.
WINDOW_SCENARIO = [
    ("I1", ModelTurn(act(1), "reach the bridge")),
    ("I2", ModelTurn(act(2))),
    ("I3", ModelTurn(act(3))),
    ("I4", ModelTurn(act(4))),
    ("I5", ModelTurn(act(5), "cross and open the chest")),
    ("I6", ModelTurn(act(6))),
    ("I7", ModelTurn(act(7))),
]
# (latest reasoning, resident frames, evicted-or-flushed frames) after each step
WINDOW_EXPECTED = [
    ("reach the bridge", ["I1"], []),
    ("reach the bridge", ["I1", "I2"], []),
    ("reach the bridge", ["I2", "I3"], ["I1"]),
    ("reach the bridge", ["I3", "I4"], ["I2"]),
    ("cross and open the chest", ["I5"], ["I3", "I4"]),
    ("cross and open the chest", ["I5", "I6"], []),
    ("cross and open the chest", ["I6", "I7"], ["I5"]),
]


def run_window_scenario(capacity: int = 2):
    ctx = ContextWindow(SYSTEM, capacity=capacity, system_tokens=10)
    rows = []
    for frame, turn in WINDOW_SCENARIO:
        gone = ctx.record(frame, turn)
        rows.append((ctx.latest_reasoning, [e.frame for e in ctx.entries], [e.frame for e in gone]))
    return ctx, rows


def random_context_ops(rng: random.Random, ctx: ContextWindow, n_ops: int):
    """Apply random pushes/flushes, checking invariants after each. Returns op count."""
    total_pushed = 0
    last_reasoning = ctx.latest_reasoning
    since = ctx.steps_since_reasoning
    for i in range(n_ops):
        thinking = rng.random() < 0.15
        turn = ModelTurn(ActionSequence.noop(), f"r{i}" if thinking else None)
        before = list(ctx.entries)
        gone = ctx.record(f"f{i}", turn, n_tokens=rng.randint(1, 50))
        total_pushed += 1
        plan = ctx.plan_cache(gone)
        assert len(ctx.entries) <= ctx.capacity
        assert ctx.pushed == ctx.evicted + ctx.resident + ctx.flushed
        assert plan.sink_anchor.label == "system"
        assert plan.sink_anchor not in plan.dropped_spans
        assert plan.reused_prefix_len >= plan.sink_anchor.length
        if thinking:
            last_reasoning, since = f"r{i}", 0
            assert [e.frame for e in ctx.entries] == [f"f{i}"]
            assert gone == before
            assert plan.reused_prefix_len == ctx.system_tokens
        else:
            since += 1
            assert len(gone) in (0, 1)
            if gone:
                assert gone[0] == before[0]
            assert plan.dropped_len == sum(e.n_tokens for e in gone)
        assert ctx.latest_reasoning == last_reasoning
        assert ctx.steps_since_reasoning == since
        assert ctx.force_think_check() == (since > 100)
    return total_pushed
